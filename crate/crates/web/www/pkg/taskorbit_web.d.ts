/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Single-view detectability on a (φ, θ) grid, φ-major. The map is kept
     * and reused by `plan`.
     */
    detectabilityMap(phi_step: number, theta_step: number): Float64Array;
    mapPhis(): Float64Array;
    mapThetas(): Float64Array;
    /**
     * Build the phantom for `seed` (jittered anatomy and screw placement).
     */
    constructor(seed: number);
    /**
     * Axial density slice `k` as 8-bit grey, row-major (y, x).
     */
    phantomSlice(k: number): Uint8Array;
    /**
     * Greedy task-aware plan from (start φ, start θ); returns interleaved
     * (φ, θ) pairs. Uses the stored map when there is one, else exact scores.
     */
    plan(lambda: number, start_phi: number, start_theta: number): Float64Array;
    /**
     * Polychromatic line-integral image at (φ, θ); `fluence <= 0` is noiseless.
     */
    projection(phi: number, theta: number, fluence: number): Uint8Array;
    readonly depth: number;
    readonly projCols: number;
    readonly projRows: number;
    readonly size: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_depth: (a: number) => number;
    readonly demo_detectabilityMap: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_mapPhis: (a: number) => [number, number];
    readonly demo_mapThetas: (a: number) => [number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_phantomSlice: (a: number, b: number) => [number, number, number, number];
    readonly demo_plan: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_projCols: (a: number) => number;
    readonly demo_projRows: (a: number) => number;
    readonly demo_projection: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_size: (a: number) => number;
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
