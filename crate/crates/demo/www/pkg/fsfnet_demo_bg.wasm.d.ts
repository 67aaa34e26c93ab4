/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_accuracy: (a: number) => number;
export const demo_attention: (a: number, b: number) => [number, number];
export const demo_attention_names: (a: number) => [number, number];
export const demo_attention_size: (a: number, b: number) => number;
export const demo_depth: (a: number) => [number, number];
export const demo_hha: (a: number, b: number) => [number, number];
export const demo_labels: (a: number) => [number, number];
export const demo_load_checkpoint: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_new: (a: bigint, b: number, c: number, d: number) => [number, number, number];
export const demo_punch_hole: (a: number, b: number, c: number, d: number) => [number, number];
export const demo_reset_depth: (a: number) => [number, number];
export const demo_rgb: (a: number) => [number, number];
export const demo_segment: (a: number) => [number, number, number, number];
export const demo_size: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
