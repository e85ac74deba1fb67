/* tslint:disable */
/* eslint-disable */

/**
 * Outcome of one multigrid solve with right-hand side 1.
 */
export class GmgRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly converged: boolean;
    /**
     * Relative residual per iteration, starting at 1.
     */
    readonly history: Float64Array;
    readonly iterations: number;
    readonly solution: Float64Array;
}

/**
 * Random field in [0, 1] behind the coefficients, row-major.
 */
export function coefficient_field(grid: number, dist: string, seed: bigint): Float64Array;

export function gmg_solve(grid: number, dist: string, re_limit: number, seed: bigint, tol: number): GmgRun;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_gmgrun_free: (a: number, b: number) => void;
    readonly coefficient_field: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly gmg_solve: (a: number, b: number, c: number, d: number, e: bigint, f: number) => [number, number, number];
    readonly gmgrun_converged: (a: number) => number;
    readonly gmgrun_history: (a: number) => [number, number];
    readonly gmgrun_iterations: (a: number) => number;
    readonly gmgrun_solution: (a: number) => [number, number];
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
