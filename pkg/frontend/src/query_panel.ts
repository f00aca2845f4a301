// Query image display plus free-form highlight painting. Strokes live in
// BrushState (image pixel coordinates); the canvas only visualizes them, so
// the serialized mask always has exactly the displayed image's dimensions.

import { BrushState } from './mask';
import type { MaskPayload } from './types';

export class QueryPanel {
    readonly root: HTMLElement;
    readonly brush: BrushState;
    readonly canvas: HTMLCanvasElement;
    private readonly image: HTMLImageElement;
    private readonly hint: HTMLElement;
    private imageId: string | null = null;
    private width = 0;
    private height = 0;
    private painting = false;
    onChange: (() => void) | null = null;

    constructor(root: HTMLElement, brushRadius = 14) {
        this.root = root;
        this.brush = new BrushState(brushRadius);
        root.classList.add('query-panel');

        const stage = document.createElement('div');
        stage.className = 'query-stage';
        this.image = document.createElement('img');
        this.image.className = 'query-image';
        this.image.draggable = false;
        this.canvas = document.createElement('canvas');
        this.canvas.className = 'query-canvas';
        stage.append(this.image, this.canvas);

        this.hint = document.createElement('div');
        this.hint.className = 'query-hint';
        this.hint.textContent = 'Pick an image from the gallery, then paint the region to match.';

        const controls = document.createElement('div');
        controls.className = 'query-controls';
        const radius = document.createElement('input');
        radius.type = 'range';
        radius.min = '2';
        radius.max = '60';
        radius.value = String(brushRadius);
        radius.title = 'Brush size';
        radius.addEventListener('input', () => {
            this.brush.radius = Number(radius.value);
        });
        const undo = document.createElement('button');
        undo.textContent = 'Undo';
        undo.addEventListener('click', () => {
            this.brush.undo();
            this.redraw();
            this.onChange?.();
        });
        const clear = document.createElement('button');
        clear.textContent = 'Clear';
        clear.addEventListener('click', () => {
            this.brush.clear();
            this.redraw();
            this.onChange?.();
        });
        controls.append(radius, undo, clear);
        root.append(this.hint, stage, controls);

        this.canvas.addEventListener('pointerdown', (ev) => {
            if (!this.imageId) return;
            this.painting = true;
            this.canvas.setPointerCapture?.(ev.pointerId);
            const p = this.toImageCoords(ev);
            this.beginStroke(p.x, p.y);
        });
        this.canvas.addEventListener('pointermove', (ev) => {
            if (!this.painting) return;
            const p = this.toImageCoords(ev);
            this.extendStroke(p.x, p.y);
        });
        const stop = () => {
            if (!this.painting) return;
            this.painting = false;
            this.endStroke();
        };
        this.canvas.addEventListener('pointerup', stop);
        this.canvas.addEventListener('pointerleave', stop);
    }

    private toImageCoords(ev: PointerEvent): { x: number; y: number } {
        const rect = this.canvas.getBoundingClientRect();
        const scaleX = rect.width > 0 ? this.width / rect.width : 1;
        const scaleY = rect.height > 0 ? this.height / rect.height : 1;
        return { x: (ev.clientX - rect.left) * scaleX, y: (ev.clientY - rect.top) * scaleY };
    }

    setImage(imageId: string, src: string, width: number, height: number): void {
        this.imageId = imageId;
        this.width = width;
        this.height = height;
        this.image.src = src;
        this.image.width = width;
        this.image.height = height;
        this.canvas.width = width;
        this.canvas.height = height;
        this.hint.textContent = imageId;
        this.brush.clear();
        this.redraw();
        this.onChange?.();
    }

    reset(): void {
        this.imageId = null;
        this.width = 0;
        this.height = 0;
        this.image.removeAttribute('src');
        this.brush.clear();
        this.redraw();
        this.hint.textContent = 'Pick an image from the gallery, then paint the region to match.';
        this.onChange?.();
    }

    get selectedImageId(): string | null {
        return this.imageId;
    }

    get imageDims(): { width: number; height: number } {
        return { width: this.width, height: this.height };
    }

    beginStroke(x: number, y: number): void {
        this.brush.beginStroke(x, y);
        this.redraw();
        this.onChange?.();
    }

    extendStroke(x: number, y: number): void {
        this.brush.extendStroke(x, y);
        this.redraw();
        this.onChange?.();
    }

    endStroke(): void {
        this.brush.endStroke();
    }

    hasSelection(): boolean {
        return this.imageId !== null;
    }

    hasMask(): boolean {
        return !this.brush.isEmpty();
    }

    /** Mask at exactly the displayed image's (height, width). */
    serializeMask(): MaskPayload {
        return this.brush.toMask(this.height, this.width);
    }

    private redraw(): void {
        const ctx = this.canvas.getContext('2d');
        if (!ctx) return;
        ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
        ctx.fillStyle = 'rgba(64, 160, 255, 0.45)';
        ctx.strokeStyle = 'rgba(64, 160, 255, 0.45)';
        ctx.lineCap = 'round';
        ctx.lineJoin = 'round';
        for (const stroke of this.brush.allStrokes()) {
            ctx.lineWidth = stroke.radius * 2;
            const first = stroke.points[0];
            if (!first) continue;
            if (stroke.points.length === 1) {
                ctx.beginPath();
                ctx.arc(first.x, first.y, stroke.radius, 0, Math.PI * 2);
                ctx.fill();
                continue;
            }
            ctx.beginPath();
            ctx.moveTo(first.x, first.y);
            for (const p of stroke.points.slice(1)) ctx.lineTo(p.x, p.y);
            ctx.stroke();
        }
    }
}
