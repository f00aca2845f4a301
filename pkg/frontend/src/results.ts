// Result tiles: thumbnail, matched-region overlay, and the server's cosine
// score printed verbatim to three decimals (never recomputed client-side).

import type { ApiClient } from './api';
import { drawOverlay } from './overlay';
import type { SearchResponse } from './types';

export const TILE_SIZE = 160;

export function formatScore(score: number): string {
    return score.toFixed(3);
}

export class ResultsPanel {
    readonly root: HTMLElement;
    private readonly api: ApiClient;
    private readonly status: HTMLElement;
    private readonly grid: HTMLElement;

    constructor(root: HTMLElement, api: ApiClient) {
        this.root = root;
        this.api = api;
        root.classList.add('results');
        this.status = document.createElement('div');
        this.status.className = 'results-status';
        this.grid = document.createElement('div');
        this.grid.className = 'results-grid';
        root.append(this.status, this.grid);
    }

    showError(message: string): void {
        this.grid.replaceChildren();
        this.status.textContent = message;
        this.status.classList.add('error');
    }

    showSearching(): void {
        this.status.textContent = 'Searching...';
        this.status.classList.remove('error');
    }

    render(response: SearchResponse): void {
        this.status.classList.remove('error');
        this.status.textContent =
            `${response.hits.length} neighbors in ${response.timing_ms} ms`;
        this.grid.replaceChildren();
        for (const hit of response.hits) {
            const tile = document.createElement('figure');
            tile.className = 'result-tile';
            tile.dataset.imageId = hit.image_id;

            const stage = document.createElement('div');
            stage.className = 'result-stage';
            const img = document.createElement('img');
            img.src = this.api.thumbnailUrl(hit.thumbnail_url);
            img.alt = hit.image_id;
            const overlay = document.createElement('canvas');
            overlay.width = TILE_SIZE;
            overlay.height = TILE_SIZE;
            overlay.className = 'result-overlay';
            drawOverlay(overlay, hit.region_mask);
            stage.append(img, overlay);

            const caption = document.createElement('figcaption');
            const scoreSpan = document.createElement('span');
            scoreSpan.className = 'result-score';
            scoreSpan.textContent = formatScore(hit.score);
            caption.append(scoreSpan);
            if (hit.label) {
                const labelSpan = document.createElement('span');
                labelSpan.className = 'result-label';
                labelSpan.textContent = hit.label;
                caption.append(labelSpan);
            }

            tile.append(stage, caption);
            this.grid.append(tile);
        }
    }
}
