import { describe, expect, it } from 'vitest';

import { BrushState, maskIsEmpty } from '../src/mask';

describe('BrushState.toMask', () => {
    it('serializes to exactly the requested dims', () => {
        const brush = new BrushState(5);
        brush.beginStroke(3, 3);
        brush.endStroke();
        const mask = brush.toMask(48, 64);
        expect(mask.rows).toBe(48);
        expect(mask.cols).toBe(64);
        expect(mask.data.length).toBe(48 * 64);
    });

    it('covers everything when one stamp encloses the grid', () => {
        const brush = new BrushState(200);
        brush.beginStroke(32, 24);
        brush.endStroke();
        const mask = brush.toMask(48, 64);
        expect(mask.data.every((v) => v === 1)).toBe(true);
    });

    it('is all zeros with no strokes', () => {
        const brush = new BrushState(10);
        const mask = brush.toMask(16, 16);
        expect(mask.data.every((v) => v === 0)).toBe(true);
        expect(maskIsEmpty(mask)).toBe(true);
        expect(brush.isEmpty()).toBe(true);
    });

    it('marks only pixels whose centers fall inside the stroke disk', () => {
        const brush = new BrushState(1.2);
        brush.beginStroke(5.5, 5.5); // dead center of pixel (5, 5)
        brush.endStroke();
        const mask = brush.toMask(11, 11);
        expect(mask.data[5 * 11 + 5]).toBe(1);
        expect(mask.data[5 * 11 + 6]).toBe(1); // center distance 1 <= 1.2
        expect(mask.data[5 * 11 + 7]).toBe(0); // center distance 2 > 1.2
        expect(mask.data[0]).toBe(0);
    });

    it('fills along segments, not just at sampled points', () => {
        const brush = new BrushState(1.0);
        brush.beginStroke(0.5, 5.5);
        brush.extendStroke(19.5, 5.5);
        brush.endStroke();
        const mask = brush.toMask(11, 20);
        for (let col = 0; col < 20; col++) {
            expect(mask.data[5 * 20 + col]).toBe(1);
        }
        expect(mask.data[0]).toBe(0);
    });

    it('clear empties the mask after painting', () => {
        const brush = new BrushState(50);
        brush.beginStroke(10, 10);
        brush.endStroke();
        expect(maskIsEmpty(brush.toMask(20, 20))).toBe(false);
        brush.clear();
        expect(maskIsEmpty(brush.toMask(20, 20))).toBe(true);
    });

    it('undo removes only the latest stroke', () => {
        const brush = new BrushState(1.0);
        brush.beginStroke(2.5, 2.5);
        brush.endStroke();
        brush.beginStroke(10.5, 10.5);
        brush.endStroke();
        brush.undo();
        const mask = brush.toMask(16, 16);
        expect(mask.data[2 * 16 + 2]).toBe(1);
        expect(mask.data[10 * 16 + 10]).toBe(0);
    });

    it('values are strictly binary', () => {
        const brush = new BrushState(3);
        brush.beginStroke(4, 4);
        brush.extendStroke(9, 7);
        brush.endStroke();
        const values = new Set(brush.toMask(12, 12).data);
        expect([...values].sort()).toEqual([0, 1]);
    });
});
