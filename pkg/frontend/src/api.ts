// Thin typed client over the JSON API. All ranking happens server-side;
// this module never recomputes or reorders anything.

import type { DatasetInfo, GalleryPage, SearchRequest, SearchResponse } from './types';

export class ApiError extends Error {
    readonly status: number;
    readonly code: string;

    constructor(status: number, code: string, detail: string) {
        super(detail);
        this.status = status;
        this.code = code;
    }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
    readonly baseUrl: string;
    private readonly fetchFn: FetchLike;

    constructor(baseUrl = '', fetchFn?: FetchLike) {
        this.baseUrl = baseUrl.replace(/\/$/, '');
        this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
    }

    private async request<T>(path: string, init?: RequestInit): Promise<T> {
        const resp = await this.fetchFn(this.baseUrl + path, init);
        if (!resp.ok) {
            let code = 'error';
            let detail = `HTTP ${resp.status}`;
            try {
                const body = await resp.json();
                if (typeof body.code === 'string') code = body.code;
                if (typeof body.detail === 'string') detail = body.detail;
            } catch {
                // non-JSON error body; keep the defaults
            }
            throw new ApiError(resp.status, code, detail);
        }
        return (await resp.json()) as T;
    }

    listDatasets(): Promise<DatasetInfo[]> {
        return this.request<DatasetInfo[]>('/api/datasets');
    }

    listImages(dataset: string, offset: number, limit: number): Promise<GalleryPage> {
        const params = new URLSearchParams({ offset: String(offset), limit: String(limit) });
        return this.request<GalleryPage>(
            `/api/datasets/${encodeURIComponent(dataset)}/images?${params}`,
        );
    }

    search(req: SearchRequest, signal?: AbortSignal): Promise<SearchResponse> {
        return this.request<SearchResponse>('/api/search', {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify(req),
            signal,
        });
    }

    thumbnailUrl(relative: string | null): string {
        if (!relative) return '';
        return relative.startsWith('http') ? relative : this.baseUrl + relative;
    }
}
