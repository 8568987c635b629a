/* tslint:disable */
/* eslint-disable */

/**
 * Cohen's kappa for two whitespace- or comma-separated label sequences.
 */
export function kappa(a: string, b: string): string;

/**
 * Draws `n` scores from two overlapping normals whose means lie
 * `separation` standard deviations apart, then reports the ROC curve, its
 * area by both routes and the zero-FPR operating point.
 */
export function roc_explorer(n: number, separation: number, positive_share: number, seed: bigint): string;

/**
 * Generates a synthetic corpus, takes its true labels as the classifier
 * output and returns the topic rate and stance fractions for `topic`,
 * smoothed over `window` days (odd; 1 is raw).
 */
export function synthetic_timeline(posts: number, seed: bigint, topic: string, window: number, drop_not_applicable: boolean): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly kappa: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly roc_explorer: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly synthetic_timeline: (a: number, b: bigint, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
