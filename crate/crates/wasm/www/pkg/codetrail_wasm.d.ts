/* tslint:disable */
/* eslint-disable */

/**
 * A loaded session with its labels and one timeline per file.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    files(): string[];
    metrics(): string;
    /**
     * Parses and labels a session log given as JSON text.
     */
    constructor(text: string, theta: number);
    /**
     * What a click at `(t, line)` selects: a marker, an overlay or a position.
     */
    pick(file: string, t: number, line: number): string;
    primaryFile(): string | undefined;
    /**
     * A generated session with pasted, completed and retyped assistant code.
     */
    static sample(seed: number, edits: number, theta: number): Demo;
    sessionJson(): string;
    /**
     * Text and provenance spans of `file` as of time `t`.
     */
    snapshot(file: string, t: number): string;
    /**
     * Timeline model for one file; `first_line = 0` means no viewport.
     */
    timeline(file: string, first_line: number, last_line: number): string;
}

/**
 * Token-level LCS similarity of two code fragments, in `[0, 1]`.
 */
export function codeSimilarity(a: string, b: string): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly codeSimilarity: (a: number, b: number, c: number, d: number) => number;
    readonly demo_files: (a: number) => [number, number];
    readonly demo_metrics: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_pick: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_primaryFile: (a: number) => [number, number];
    readonly demo_sample: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_sessionJson: (a: number) => [number, number];
    readonly demo_snapshot: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_timeline: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
