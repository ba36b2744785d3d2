/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_depth: (a: number) => number;
export const demo_detectabilityMap: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_mapPhis: (a: number) => [number, number];
export const demo_mapThetas: (a: number) => [number, number];
export const demo_new: (a: number) => [number, number, number];
export const demo_phantomSlice: (a: number, b: number) => [number, number, number, number];
export const demo_plan: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_projCols: (a: number) => number;
export const demo_projRows: (a: number) => number;
export const demo_projection: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_size: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
