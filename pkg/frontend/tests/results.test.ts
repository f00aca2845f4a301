import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { maskCellRects } from '../src/overlay';
import { ResultsPanel, formatScore } from '../src/results';
import type { SearchResponse } from '../src/types';

function sampleResponse(): SearchResponse {
    const mask = [
        [0, 1],
        [0, 0.5],
    ];
    return {
        hits: [
            { image_id: 'a.png', score: 1.0, alpha: 0, beta: 0, region_mask: mask, thumbnail_url: '/t/a', label: 'cat' },
            { image_id: 'b.png', score: 0.87654, alpha: 1, beta: 2, region_mask: mask, thumbnail_url: '/t/b', label: null },
            { image_id: 'c.png', score: -0.25, alpha: 0, beta: 1, region_mask: mask, thumbnail_url: '/t/c', label: null },
        ],
        timing_ms: 12,
    };
}

describe('ResultsPanel', () => {
    it('renders one tile per hit with the API score to 3 decimals', () => {
        const root = document.createElement('div');
        const panel = new ResultsPanel(root, new ApiClient(''));
        const response = sampleResponse();
        panel.render(response);
        const tiles = root.querySelectorAll('.result-tile');
        expect(tiles.length).toBe(3);
        const scores = [...root.querySelectorAll('.result-score')].map((el) => el.textContent);
        expect(scores).toEqual(['1.000', '0.877', '-0.250']);
        response.hits.forEach((hit, i) => {
            expect(scores[i]).toBe(hit.score.toFixed(3));
        });
    });

    it('shows labels only when present', () => {
        const root = document.createElement('div');
        const panel = new ResultsPanel(root, new ApiClient(''));
        panel.render(sampleResponse());
        const labels = [...root.querySelectorAll('.result-label')].map((el) => el.textContent);
        expect(labels).toEqual(['cat']);
    });

    it('replaces tiles on re-render without leftovers', () => {
        const root = document.createElement('div');
        const panel = new ResultsPanel(root, new ApiClient(''));
        panel.render(sampleResponse());
        panel.render({ hits: sampleResponse().hits.slice(0, 1), timing_ms: 3 });
        expect(root.querySelectorAll('.result-tile').length).toBe(1);
    });

    it('shows errors in the status line and clears the grid', () => {
        const root = document.createElement('div');
        const panel = new ResultsPanel(root, new ApiClient(''));
        panel.render(sampleResponse());
        panel.showError('The painted region is empty; paint a region first.');
        expect(root.querySelector('.results-status')?.classList.contains('error')).toBe(true);
        expect(root.querySelectorAll('.result-tile').length).toBe(0);
    });
});

describe('formatScore', () => {
    it('prints exactly three decimals', () => {
        expect(formatScore(0.9999994)).toBe('1.000');
        expect(formatScore(0.1)).toBe('0.100');
    });
});

describe('maskCellRects', () => {
    it('upscales cells nearest-neighbor with exact coverage', () => {
        const rects = maskCellRects(
            [
                [1, 0],
                [0, 1],
            ],
            100,
            100,
        );
        expect(rects).toEqual([
            { x: 0, y: 0, w: 50, h: 50, value: 1 },
            { x: 50, y: 50, w: 50, h: 50, value: 1 },
        ]);
    });

    it('skips non-positive cells and handles ragged sizes', () => {
        const rects = maskCellRects([[0, 0, 0]], 90, 30);
        expect(rects).toEqual([]);
    });
});
