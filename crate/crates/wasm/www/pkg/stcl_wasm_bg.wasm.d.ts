/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_phantom_free: (a: number, b: number) => void;
export const phantom_augmented: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
export const phantom_baseline: (a: number, b: number) => [number, number];
export const phantom_intervals: (a: number) => [number, number];
export const phantom_new: (a: number) => number;
export const phantom_size: (a: number) => number;
export const phantom_slice: (a: number, b: number, c: number, d: number) => [number, number];
export const phantom_time_points: (a: number) => number;
export const phantom_volumes: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
