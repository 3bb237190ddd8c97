/* tslint:disable */
/* eslint-disable */

/**
 * Normalized cumulative kernel model at `tau = 0..=horizon`.
 */
export function kernel_model(i_inf: number, b: number, beta: number, horizon: number): Float64Array;

/**
 * Simulate a panel whose kernel follows the modified propagator with
 * asymptote `i_inf`, deconvolve it, and return a JSON object with the true
 * and estimated normalized kernels, bootstrap bands, the bare response and
 * the one-parameter asymptote fit.
 */
export function kernel_oracle(n_stocks: number, n_days: number, seed: bigint, i_inf: number, replicates: number): string;

/**
 * `I_prop(z)` at `points` evenly spaced z in `[0, z_max]`.
 */
export function relaxation_curve(beta: number, z_max: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly kernel_model: (a: number, b: number, c: number, d: number) => [number, number];
    readonly kernel_oracle: (a: number, b: number, c: bigint, d: number, e: number) => [number, number, number, number];
    readonly relaxation_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
