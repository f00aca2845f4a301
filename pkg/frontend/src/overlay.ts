// Region-mask overlay rendering. The matched region arrives at feature
// resolution (e.g. 7x7); cells are upscaled nearest-neighbor so the blocky
// footprint stays honest about what the model actually compared.

export interface CellRect {
    x: number;
    y: number;
    w: number;
    h: number;
    value: number;
}

/** Pixel-space rectangles of all positive mask cells on a width x height target. */
export function maskCellRects(
    mask: number[][],
    width: number,
    height: number,
): CellRect[] {
    const rows = mask.length;
    const cols = rows > 0 ? mask[0]!.length : 0;
    if (rows === 0 || cols === 0) return [];
    const rects: CellRect[] = [];
    for (let r = 0; r < rows; r++) {
        const rowArr = mask[r]!;
        const y0 = Math.round((r * height) / rows);
        const y1 = Math.round(((r + 1) * height) / rows);
        for (let c = 0; c < cols; c++) {
            const value = rowArr[c] ?? 0;
            if (value <= 0) continue;
            const x0 = Math.round((c * width) / cols);
            const x1 = Math.round(((c + 1) * width) / cols);
            rects.push({ x: x0, y: y0, w: x1 - x0, h: y1 - y0, value });
        }
    }
    return rects;
}

/** Paint the overlay onto a canvas (no-op without a 2D context, e.g. in tests). */
export function drawOverlay(
    canvas: HTMLCanvasElement,
    mask: number[][],
    color = '255, 64, 64',
    maxAlpha = 0.55,
): void {
    const ctx = canvas.getContext('2d');
    if (!ctx) return;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    for (const rect of maskCellRects(mask, canvas.width, canvas.height)) {
        ctx.fillStyle = `rgba(${color}, ${maxAlpha * Math.min(1, rect.value)})`;
        ctx.fillRect(rect.x, rect.y, rect.w, rect.h);
    }
}
