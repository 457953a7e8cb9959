/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Grey-level RGBA of the high-pass detail of a truth or 10 m band.
     */
    highpass(band: string, nyquist_gain: number): Uint8Array;
    /**
     * JSON array of `{method, report}` scored against the truth.
     */
    metrics(q_window: number): string;
    constructor(size: number, seed: bigint, nyquist_gain: number);
    /**
     * RGBA pixels of a view in the given false-colour band triple.
     */
    render(view: string, r: string, g: string, b: string): Uint8Array;
    size(): number;
    /**
     * Names accepted by `render`, as a JSON array.
     */
    views(): string;
}

/**
 * JSON with the kernel taps, its sigma and the sampled frequency response.
 */
export function mtfKernel(nyquist_gain: number, ratio: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_highpass: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_metrics: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: bigint, c: number) => [number, number, number];
    readonly demo_render: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_views: (a: number) => [number, number];
    readonly mtfKernel: (a: number, b: number) => [number, number, number, number];
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
