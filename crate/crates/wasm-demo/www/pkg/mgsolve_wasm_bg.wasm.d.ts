/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_gmgrun_free: (a: number, b: number) => void;
export const coefficient_field: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const gmg_solve: (a: number, b: number, c: number, d: number, e: bigint, f: number) => [number, number, number];
export const gmgrun_converged: (a: number) => number;
export const gmgrun_history: (a: number) => [number, number];
export const gmgrun_iterations: (a: number) => number;
export const gmgrun_solution: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
