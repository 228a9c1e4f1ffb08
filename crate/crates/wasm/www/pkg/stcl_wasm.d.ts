/* tslint:disable */
/* eslint-disable */

/**
 * One synthetic patient with four aligned time points.
 */
export class Phantom {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Slice `s` of an augmented copy of time point `time`.
     */
    augmented(time: number, channel: number, s: number, plane: number, quarter_turns: number, reversed: boolean): Uint8Array;
    /**
     * Linear-baseline mask for the time point `interval_days` after time 2,
     * as a full volume of 0/255 bytes. Empty if the baseline is undefined.
     */
    baseline(interval_days: number): Uint8Array;
    /**
     * Days between consecutive time points.
     */
    intervals(): Float64Array;
    constructor(seed: number);
    /**
     * Edge length of the cubic crop.
     */
    size(): number;
    /**
     * Slice `s` of channel `channel` (0 ICVF, 1 CT, 2 mask) at time `time`.
     */
    slice(time: number, channel: number, s: number): Uint8Array;
    time_points(): number;
    /**
     * Tumor voxel count at each time point.
     */
    volumes(): Uint32Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_phantom_free: (a: number, b: number) => void;
    readonly phantom_augmented: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
    readonly phantom_baseline: (a: number, b: number) => [number, number];
    readonly phantom_intervals: (a: number) => [number, number];
    readonly phantom_new: (a: number) => number;
    readonly phantom_size: (a: number) => number;
    readonly phantom_slice: (a: number, b: number, c: number, d: number) => [number, number];
    readonly phantom_time_points: (a: number) => number;
    readonly phantom_volumes: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
