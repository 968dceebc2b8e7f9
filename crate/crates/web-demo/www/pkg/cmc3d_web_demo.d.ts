/* tslint:disable */
/* eslint-disable */

/**
 * RGBA strip: original | view 1 | view 2.
 */
export function augment_views(seed: number, crop_min: number, contrast_spread: number): Uint8Array;

export function lambda_histogram(alpha: number, samples: number, bins: number, seed: number): Uint32Array;

/**
 * RGBA strip: healthy | lesioned | mixed.
 */
export function mixup_preview(seed: number, lambda: number): Uint8Array;

export function panel_height(): number;

export function panel_width(): number;

export function supcon_curve(tau: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly augment_views: (a: number, b: number, c: number) => [number, number, number, number];
    readonly lambda_histogram: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly mixup_preview: (a: number, b: number) => [number, number, number, number];
    readonly panel_height: () => number;
    readonly panel_width: () => number;
    readonly supcon_curve: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
