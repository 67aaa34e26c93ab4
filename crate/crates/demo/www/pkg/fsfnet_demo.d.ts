/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Fraction of labeled pixels the last segmentation got right.
     */
    accuracy(): number;
    attention(i: number): Uint8Array;
    /**
     * Names of the attention gates recorded by the last segmentation.
     */
    attention_names(): string[];
    /**
     * Side length of gate `i`.
     */
    attention_size(i: number): number;
    /**
     * Near is bright; missing depth is red.
     */
    depth(): Uint8Array;
    /**
     * `channel` 0..3 shows one HHA channel in gray; any other value shows all three as RGB.
     */
    hha(channel: number): Uint8Array;
    labels(): Uint8Array;
    /**
     * Replaces the network with one read from checkpoint bytes; returns a summary line.
     */
    load_checkpoint(bytes: Uint8Array): string;
    /**
     * Renders synthetic scene `index` and builds an untrained network sized for it.
     */
    constructor(seed: bigint, index: number, size: number, classes: number);
    /**
     * Marks depth inside a disc as missing and re-encodes HHA.
     */
    punch_hole(cx: number, cy: number, radius: number): void;
    reset_depth(): void;
    rgb(): Uint8Array;
    /**
     * Runs the network in eval mode and returns the predicted labels.
     */
    segment(): Uint8Array;
    size(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_accuracy: (a: number) => number;
    readonly demo_attention: (a: number, b: number) => [number, number];
    readonly demo_attention_names: (a: number) => [number, number];
    readonly demo_attention_size: (a: number, b: number) => number;
    readonly demo_depth: (a: number) => [number, number];
    readonly demo_hha: (a: number, b: number) => [number, number];
    readonly demo_labels: (a: number) => [number, number];
    readonly demo_load_checkpoint: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_new: (a: bigint, b: number, c: number, d: number) => [number, number, number];
    readonly demo_punch_hole: (a: number, b: number, c: number, d: number) => [number, number];
    readonly demo_reset_depth: (a: number) => [number, number];
    readonly demo_rgb: (a: number) => [number, number];
    readonly demo_segment: (a: number) => [number, number, number, number];
    readonly demo_size: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
