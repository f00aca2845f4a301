// Brush geometry and mask serialization, independent of any canvas so the
// mask sent to the server is exactly what the math says, not what a
// particular 2D context rasterized.

import type { MaskPayload } from './types';

export interface Point {
    x: number;
    y: number;
}

export interface Stroke {
    radius: number;
    points: Point[];
}

function distanceToSegmentSq(px: number, py: number, a: Point, b: Point): number {
    const dx = b.x - a.x;
    const dy = b.y - a.y;
    const lenSq = dx * dx + dy * dy;
    let t = 0;
    if (lenSq > 0) {
        t = ((px - a.x) * dx + (py - a.y) * dy) / lenSq;
        t = Math.max(0, Math.min(1, t));
    }
    const cx = a.x + t * dx;
    const cy = a.y + t * dy;
    return (px - cx) * (px - cx) + (py - cy) * (py - cy);
}

export class BrushState {
    radius: number;
    private strokes: Stroke[] = [];
    private active: Stroke | null = null;

    constructor(radius = 12) {
        this.radius = radius;
    }

    beginStroke(x: number, y: number): void {
        this.active = { radius: this.radius, points: [{ x, y }] };
        this.strokes.push(this.active);
    }

    extendStroke(x: number, y: number): void {
        if (!this.active) {
            this.beginStroke(x, y);
            return;
        }
        this.active.points.push({ x, y });
    }

    endStroke(): void {
        this.active = null;
    }

    undo(): void {
        this.strokes.pop();
        this.active = null;
    }

    clear(): void {
        this.strokes = [];
        this.active = null;
    }

    isEmpty(): boolean {
        return this.strokes.length === 0;
    }

    allStrokes(): readonly Stroke[] {
        return this.strokes;
    }

    /** Binary mask over a rows x cols pixel grid: 1 where any stroke disk
     *  covers the pixel center, 0 elsewhere. */
    toMask(rows: number, cols: number): MaskPayload {
        const data = new Array<number>(rows * cols).fill(0);
        for (const stroke of this.strokes) {
            const r = stroke.radius;
            const rSq = r * r;
            const segments: Array<[Point, Point]> = [];
            if (stroke.points.length === 1) {
                const only = stroke.points[0]!;
                segments.push([only, only]);
            } else {
                for (let i = 1; i < stroke.points.length; i++) {
                    segments.push([stroke.points[i - 1]!, stroke.points[i]!]);
                }
            }
            for (const [a, b] of segments) {
                const rowLo = Math.max(0, Math.floor(Math.min(a.y, b.y) - r));
                const rowHi = Math.min(rows - 1, Math.ceil(Math.max(a.y, b.y) + r));
                const colLo = Math.max(0, Math.floor(Math.min(a.x, b.x) - r));
                const colHi = Math.min(cols - 1, Math.ceil(Math.max(a.x, b.x) + r));
                for (let row = rowLo; row <= rowHi; row++) {
                    for (let col = colLo; col <= colHi; col++) {
                        if (data[row * cols + col] === 1) continue;
                        // pixel centers sit at (col + 0.5, row + 0.5)
                        if (distanceToSegmentSq(col + 0.5, row + 0.5, a, b) <= rSq) {
                            data[row * cols + col] = 1;
                        }
                    }
                }
            }
        }
        return { rows, cols, data };
    }
}

export function maskIsEmpty(mask: MaskPayload): boolean {
    return !mask.data.some((v) => v > 0);
}
