// Wire types for the search service JSON API.

export interface DatasetInfo {
    name: string;
    model_name: string;
    layer_name: string;
    dims: [number, number, number];
    image_count: number;
}

export interface GalleryImage {
    image_id: string;
    thumbnail_url: string;
    label: string | null;
}

export interface GalleryPage {
    total: number;
    offset: number;
    limit: number;
    images: GalleryImage[];
}

export interface MaskPayload {
    rows: number;
    cols: number;
    data: number[];
}

export interface SearchRequest {
    dataset: string;
    query_image_id: string;
    mask: MaskPayload;
    k: number;
}

export interface SearchHit {
    image_id: string;
    score: number;
    alpha: number;
    beta: number;
    region_mask: number[][];
    thumbnail_url: string | null;
    label: string | null;
}

export interface SearchResponse {
    hits: SearchHit[];
    timing_ms: number;
}
