/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_f0shift_free: (a: number, b: number) => void;
export const __wbg_voicerender_free: (a: number, b: number) => void;
export const f0shift_shifted: (a: number) => [number, number];
export const f0shift_source: (a: number) => [number, number];
export const f0shift_target: (a: number) => [number, number];
export const pqmfResponse: (a: number) => [number, number];
export const pqmfStreams: () => number;
export const renderVoice: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const shiftContour: (a: number, b: number, c: number) => [number, number, number];
export const voicerender_bands: (a: number) => number;
export const voicerender_frames: (a: number) => number;
export const voicerender_mel: (a: number) => [number, number];
export const voicerender_samples: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
