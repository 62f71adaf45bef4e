/* tslint:disable */
/* eslint-disable */

/**
 * A live oracle-guided team episode on a generated floor plan.
 */
export class EpisodeDemo {
    free(): void;
    [Symbol.dispose](): void;
    finished(): boolean;
    height(): number;
    constructor(seed: number, agents: number);
    rgba(): Uint8Array;
    status(): string;
    /**
     * Runs up to `rounds` lockstep rounds; a subtask ends on the first STOP
     * or when its budget runs out. Returns a one-line status.
     */
    step(rounds: number): string;
    width(): number;
}

/**
 * Fast-marching distance field over a generated floor plan. Click a goal,
 * then trace the descent path from any start.
 */
export class FmmDemo {
    free(): void;
    [Symbol.dispose](): void;
    height(): number;
    constructor(seed: number);
    rgba(): Uint8Array;
    /**
     * Solves from canvas pixel `(px, py)`; false when that cell is blocked.
     */
    set_goal(px: number, py: number): boolean;
    /**
     * Descends from `(px, py)` to the goal; returns the path length in cells
     * (0 when unreachable).
     */
    trace_from(px: number, py: number): number;
    width(): number;
}

/**
 * Bayesian value map driven by clicks: each click observes a cone from the
 * map center toward the click with the chosen confidence.
 */
export class ValueMapDemo {
    free(): void;
    [Symbol.dispose](): void;
    constructor(size: number);
    /**
     * Observes a 40 degree cone from the center toward canvas pixel
     * `(px, py)` with confidence `c`; returns the belief at that pixel.
     */
    observe(px: number, py: number, c: number): number;
    reset(): void;
    rgba(): Uint8Array;
    set_show_ucb(on: boolean): void;
    size(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_episodedemo_free: (a: number, b: number) => void;
    readonly __wbg_fmmdemo_free: (a: number, b: number) => void;
    readonly __wbg_valuemapdemo_free: (a: number, b: number) => void;
    readonly episodedemo_finished: (a: number) => number;
    readonly episodedemo_height: (a: number) => number;
    readonly episodedemo_new: (a: number, b: number) => [number, number, number];
    readonly episodedemo_rgba: (a: number) => [number, number];
    readonly episodedemo_status: (a: number) => [number, number];
    readonly episodedemo_step: (a: number, b: number) => [number, number];
    readonly episodedemo_width: (a: number) => number;
    readonly fmmdemo_height: (a: number) => number;
    readonly fmmdemo_new: (a: number) => [number, number, number];
    readonly fmmdemo_rgba: (a: number) => [number, number];
    readonly fmmdemo_set_goal: (a: number, b: number, c: number) => number;
    readonly fmmdemo_trace_from: (a: number, b: number, c: number) => number;
    readonly fmmdemo_width: (a: number) => number;
    readonly valuemapdemo_new: (a: number) => number;
    readonly valuemapdemo_observe: (a: number, b: number, c: number, d: number) => number;
    readonly valuemapdemo_reset: (a: number) => void;
    readonly valuemapdemo_rgba: (a: number) => [number, number];
    readonly valuemapdemo_set_show_ucb: (a: number, b: number) => void;
    readonly valuemapdemo_size: (a: number) => number;
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
