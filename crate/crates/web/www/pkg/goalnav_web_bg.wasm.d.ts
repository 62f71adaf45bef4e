/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_episodedemo_free: (a: number, b: number) => void;
export const __wbg_fmmdemo_free: (a: number, b: number) => void;
export const __wbg_valuemapdemo_free: (a: number, b: number) => void;
export const episodedemo_finished: (a: number) => number;
export const episodedemo_height: (a: number) => number;
export const episodedemo_new: (a: number, b: number) => [number, number, number];
export const episodedemo_rgba: (a: number) => [number, number];
export const episodedemo_status: (a: number) => [number, number];
export const episodedemo_step: (a: number, b: number) => [number, number];
export const episodedemo_width: (a: number) => number;
export const fmmdemo_height: (a: number) => number;
export const fmmdemo_new: (a: number) => [number, number, number];
export const fmmdemo_rgba: (a: number) => [number, number];
export const fmmdemo_set_goal: (a: number, b: number, c: number) => number;
export const fmmdemo_trace_from: (a: number, b: number, c: number) => number;
export const fmmdemo_width: (a: number) => number;
export const valuemapdemo_new: (a: number) => number;
export const valuemapdemo_observe: (a: number, b: number, c: number, d: number) => number;
export const valuemapdemo_reset: (a: number) => void;
export const valuemapdemo_rgba: (a: number) => [number, number];
export const valuemapdemo_set_show_ucb: (a: number, b: number) => void;
export const valuemapdemo_size: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
