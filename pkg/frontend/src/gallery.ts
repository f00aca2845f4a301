// Paged thumbnail gallery; clicking a tile selects the active query image.

import type { ApiClient } from './api';
import type { GalleryImage } from './types';

const PAGE_SIZE = 24;

export class GalleryView {
    readonly root: HTMLElement;
    private readonly api: ApiClient;
    private readonly grid: HTMLElement;
    private readonly pageLabel: HTMLElement;
    private readonly prevButton: HTMLButtonElement;
    private readonly nextButton: HTMLButtonElement;
    private dataset = '';
    private offset = 0;
    private total = 0;
    onSelect: ((image: GalleryImage) => void) | null = null;

    constructor(root: HTMLElement, api: ApiClient) {
        this.root = root;
        this.api = api;
        root.classList.add('gallery');
        this.grid = document.createElement('div');
        this.grid.className = 'gallery-grid';
        const nav = document.createElement('div');
        nav.className = 'gallery-nav';
        this.prevButton = document.createElement('button');
        this.prevButton.textContent = 'Prev';
        this.prevButton.addEventListener('click', () => void this.page(-1));
        this.nextButton = document.createElement('button');
        this.nextButton.textContent = 'Next';
        this.nextButton.addEventListener('click', () => void this.page(1));
        this.pageLabel = document.createElement('span');
        this.pageLabel.className = 'gallery-page';
        nav.append(this.prevButton, this.pageLabel, this.nextButton);
        root.append(this.grid, nav);
    }

    async setDataset(dataset: string): Promise<void> {
        this.dataset = dataset;
        this.offset = 0;
        await this.refresh();
    }

    private async page(direction: number): Promise<void> {
        const next = this.offset + direction * PAGE_SIZE;
        if (next < 0 || next >= this.total) return;
        this.offset = next;
        await this.refresh();
    }

    async refresh(): Promise<void> {
        if (!this.dataset) return;
        const page = await this.api.listImages(this.dataset, this.offset, PAGE_SIZE);
        this.total = page.total;
        this.grid.replaceChildren();
        for (const image of page.images) {
            const tile = document.createElement('button');
            tile.className = 'gallery-tile';
            tile.dataset.imageId = image.image_id;
            const img = document.createElement('img');
            img.src = this.api.thumbnailUrl(image.thumbnail_url);
            img.alt = image.image_id;
            img.loading = 'lazy';
            tile.append(img);
            tile.addEventListener('click', () => this.onSelect?.(image));
            this.grid.append(tile);
        }
        const last = Math.min(this.offset + PAGE_SIZE, this.total);
        this.pageLabel.textContent = `${this.offset + 1}-${last} of ${this.total}`;
        this.prevButton.disabled = this.offset === 0;
        this.nextButton.disabled = last >= this.total;
    }
}
