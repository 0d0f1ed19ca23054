/* tslint:disable */
/* eslint-disable */

/**
 * One photon against a coherent pulse with ⟨n⟩ = 1.
 * Columns: t (ps), ξ, P_exc (Fock), P_exc (coherent).
 */
export function fock_vs_coherent(tau: number, eta_out: number): Float64Array;

/**
 * Pulsed excitation. Columns: t (ps), ξ, P_V, P_H, ⟨n_H⟩.
 */
export function pulse_dynamics(n_mean: number, tau: number, delta_fss: number): Float64Array;

/**
 * Weak-probe reflectivity. Columns: detuning (μeV), R.
 */
export function reflectivity(g: number, kappa_tot: number, gamma: number, delta_fss: number, span: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly fock_vs_coherent: (a: number, b: number) => [number, number, number, number];
    readonly pulse_dynamics: (a: number, b: number, c: number) => [number, number, number, number];
    readonly reflectivity: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
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
