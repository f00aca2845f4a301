// Wires gallery selection, region painting, and live search together.
// At most one search is in flight; newer requests abort older ones.

import { ApiClient, ApiError } from './api';
import { GalleryView } from './gallery';
import { QueryPanel } from './query_panel';
import { ResultsPanel } from './results';
import type { DatasetInfo } from './types';

export const DEFAULT_K = 6;

export class App {
    readonly api: ApiClient;
    readonly gallery: GalleryView;
    readonly query: QueryPanel;
    readonly results: ResultsPanel;
    readonly searchButton: HTMLButtonElement;
    readonly datasetSelect: HTMLSelectElement;
    private datasets: DatasetInfo[] = [];
    private inflight: AbortController | null = null;

    constructor(root: HTMLElement, api: ApiClient) {
        this.api = api;
        root.classList.add('app');

        const header = document.createElement('header');
        const title = document.createElement('h1');
        title.textContent = 'Region feature search';
        this.datasetSelect = document.createElement('select');
        this.datasetSelect.className = 'dataset-select';
        this.datasetSelect.addEventListener('change', () => {
            void this.selectDataset(this.datasetSelect.value);
        });
        header.append(title, this.datasetSelect);

        const main = document.createElement('main');
        const galleryRoot = document.createElement('section');
        const queryRoot = document.createElement('section');
        const resultsRoot = document.createElement('section');
        main.append(galleryRoot, queryRoot, resultsRoot);
        root.append(header, main);

        this.gallery = new GalleryView(galleryRoot, api);
        this.query = new QueryPanel(queryRoot);
        this.results = new ResultsPanel(resultsRoot, api);

        this.searchButton = document.createElement('button');
        this.searchButton.className = 'search-button';
        this.searchButton.textContent = 'Search';
        this.searchButton.disabled = true;
        this.searchButton.addEventListener('click', () => void this.runSearch());
        queryRoot.append(this.searchButton);

        this.gallery.onSelect = (image) => {
            const img = new Image();
            img.onload = () => {
                this.query.setImage(
                    image.image_id,
                    img.src,
                    img.naturalWidth || 256,
                    img.naturalHeight || 256,
                );
            };
            img.src = this.api.thumbnailUrl(image.thumbnail_url);
        };
        this.query.onChange = () => this.updateSearchState();
    }

    async start(): Promise<void> {
        this.datasets = await this.api.listDatasets();
        this.datasetSelect.replaceChildren();
        for (const ds of this.datasets) {
            const option = document.createElement('option');
            option.value = ds.name;
            option.textContent = `${ds.name} (${ds.model_name}/${ds.layer_name})`;
            this.datasetSelect.append(option);
        }
        const first = this.datasets[0];
        if (first) await this.selectDataset(first.name);
    }

    async selectDataset(name: string): Promise<void> {
        this.datasetSelect.value = name;
        this.query.reset();  // switching datasets invalidates the selection
        await this.gallery.setDataset(name);
    }

    get activeDataset(): string {
        return this.datasetSelect.value;
    }

    updateSearchState(): void {
        this.searchButton.disabled = !(this.query.hasSelection() && this.query.hasMask());
    }

    async runSearch(k = DEFAULT_K): Promise<void> {
        const imageId = this.query.selectedImageId;
        if (!imageId || !this.query.hasMask()) return;
        this.inflight?.abort();
        const controller = new AbortController();
        this.inflight = controller;
        this.results.showSearching();
        try {
            const response = await this.api.search(
                {
                    dataset: this.activeDataset,
                    query_image_id: imageId,
                    mask: this.query.serializeMask(),
                    k,
                },
                controller.signal,
            );
            if (controller.signal.aborted) return;
            this.results.render(response);
        } catch (err) {
            if (controller.signal.aborted) return;
            if (err instanceof ApiError) {
                this.results.showError(
                    err.code === 'empty_mask'
                        ? 'The painted region is empty; paint a region first.'
                        : `Search failed: ${err.message}`,
                );
            } else {
                this.results.showError(`Search failed: ${String(err)}`);
            }
        } finally {
            if (this.inflight === controller) this.inflight = null;
        }
    }
}

export function mountApp(root: HTMLElement, baseUrl = ''): App {
    return new App(root, new ApiClient(baseUrl));
}
