/* tslint:disable */
/* eslint-disable */

/**
 * Tracked source and target contours and the shifted source contour, in Hz
 * per frame with 0 for unvoiced frames.
 */
export class F0Shift {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    shifted(): Float64Array;
    source(): Float64Array;
    target(): Float64Array;
}

/**
 * Audio and log-mel spectrogram of one synthetic clip.
 */
export class VoiceRender {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    bands(): number;
    frames(): number;
    /**
     * Log-mel values, frame-major (`frames x bands`).
     */
    mel(): Float32Array;
    /**
     * 16 kHz mono samples.
     */
    samples(): Float32Array;
}

/**
 * Magnitude responses in dB of the analysis filters, `streams x points`
 * row-major, sampled uniformly on `[0, 8000)` Hz.
 */
export function pqmfResponse(points: number): Float64Array;

export function pqmfStreams(): number;

/**
 * Renders toy speaker `speaker_index` (0 or 1) singing around `f0_mean` Hz.
 */
export function renderVoice(speaker_index: number, f0_mean: number, seconds: number, seed: bigint): VoiceRender;

/**
 * Tracks a toy source around `source_mean` Hz and a toy target around
 * `target_mean` Hz, then shifts the source by the difference of voiced means.
 */
export function shiftContour(source_mean: number, target_mean: number, seconds: number): F0Shift;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_f0shift_free: (a: number, b: number) => void;
    readonly __wbg_voicerender_free: (a: number, b: number) => void;
    readonly f0shift_shifted: (a: number) => [number, number];
    readonly f0shift_source: (a: number) => [number, number];
    readonly f0shift_target: (a: number) => [number, number];
    readonly pqmfResponse: (a: number) => [number, number];
    readonly pqmfStreams: () => number;
    readonly renderVoice: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly shiftContour: (a: number, b: number, c: number) => [number, number, number];
    readonly voicerender_bands: (a: number) => number;
    readonly voicerender_frames: (a: number) => number;
    readonly voicerender_mel: (a: number) => [number, number];
    readonly voicerender_samples: (a: number) => [number, number];
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
