/* tslint:disable */
/* eslint-disable */

/**
 * A finished counterfactual search that the page steps through.
 */
export class Stepper {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Upsampled dominant map (regions that establish the true class).
     */
    dominant(): Float64Array;
    /**
     * Per-location channel sum after `t` replacements.
     */
    energy(t: number): Float64Array;
    /**
     * Upsampled invariant map (regions that drove the wrong class).
     */
    invariant(): Float64Array;
    constructor(sigma: number, top_m: number, max_iters: number);
    pool_size(): number;
    /**
     * Class probabilities after `t` replacements.
     */
    probabilities(t: number): Float64Array;
    /**
     * `[i, j, reference, source_i, source_j]` of step `t` (1-based), empty if none.
     */
    step(t: number): Uint32Array;
    steps(): number;
    success(): boolean;
}

export function class_names(): string[];

export function grid_side(): number;

/**
 * RGBA heatmap for a canvas `ImageData`.
 */
export function heatmap_rgba(values: Float64Array, rows: number, cols: number): Uint8Array;

export function image_side(): number;

/**
 * Gaussian kernel of the given width centred on `(i, j)`.
 */
export function kernel(sigma: number, i: number, j: number): Float64Array;

/**
 * Contribution map of the scene sample for `class`.
 */
export function shapley(sigma: number, _class: number, logit: boolean): Float64Array;

export function true_class(): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_stepper_free: (a: number, b: number) => void;
    readonly class_names: () => [number, number];
    readonly grid_side: () => number;
    readonly heatmap_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly image_side: () => number;
    readonly kernel: (a: number, b: number, c: number) => [number, number, number, number];
    readonly shapley: (a: number, b: number, c: number) => [number, number, number, number];
    readonly stepper_dominant: (a: number) => [number, number];
    readonly stepper_energy: (a: number, b: number) => [number, number];
    readonly stepper_invariant: (a: number) => [number, number];
    readonly stepper_new: (a: number, b: number, c: number) => [number, number, number];
    readonly stepper_pool_size: (a: number) => number;
    readonly stepper_probabilities: (a: number, b: number) => [number, number];
    readonly stepper_step: (a: number, b: number) => [number, number];
    readonly stepper_steps: (a: number) => number;
    readonly stepper_success: (a: number) => number;
    readonly true_class: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
