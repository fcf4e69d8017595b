/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_stepper_free: (a: number, b: number) => void;
export const class_names: () => [number, number];
export const grid_side: () => number;
export const heatmap_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const image_side: () => number;
export const kernel: (a: number, b: number, c: number) => [number, number, number, number];
export const shapley: (a: number, b: number, c: number) => [number, number, number, number];
export const stepper_dominant: (a: number) => [number, number];
export const stepper_energy: (a: number, b: number) => [number, number];
export const stepper_invariant: (a: number) => [number, number];
export const stepper_new: (a: number, b: number, c: number) => [number, number, number];
export const stepper_pool_size: (a: number) => number;
export const stepper_probabilities: (a: number, b: number) => [number, number];
export const stepper_step: (a: number, b: number) => [number, number];
export const stepper_steps: (a: number) => number;
export const stepper_success: (a: number) => number;
export const true_class: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
