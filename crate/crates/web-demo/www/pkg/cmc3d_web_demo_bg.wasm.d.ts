/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const augment_views: (a: number, b: number, c: number) => [number, number, number, number];
export const lambda_histogram: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const mixup_preview: (a: number, b: number) => [number, number, number, number];
export const panel_height: () => number;
export const panel_width: () => number;
export const supcon_curve: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
