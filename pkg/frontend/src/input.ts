// Keyboard -> control mapping. Up accelerates, Down brakes, brake dominates
// when both are held. Messages go out at most at 10 Hz regardless of key
// repeat.

import { ControlMessage } from './protocol.js';

export const ACCEL_UP = 2.0;
export const ACCEL_DOWN = -3.0;
export const CONTROL_PERIOD_MS = 100;

export interface KeyState {
    up: boolean;
    down: boolean;
}

export function keysToControl(keys: KeyState): ControlMessage {
    let accel = 0.0;
    if (keys.down) accel = ACCEL_DOWN;     // brake dominates
    else if (keys.up) accel = ACCEL_UP;
    return { type: 'control', accel };
}

export class ControlTicker {
    private keys: KeyState = { up: false, down: false };
    private lastSent = Number.NEGATIVE_INFINITY;

    setKey(code: string, pressed: boolean): void {
        if (code === 'ArrowUp') this.keys.up = pressed;
        if (code === 'ArrowDown') this.keys.down = pressed;
    }

    snapshot(): KeyState {
        return { ...this.keys };
    }

    /** Returns the message to send now, or null while throttled to 10 Hz. */
    tick(nowMs: number): ControlMessage | null {
        if (nowMs - this.lastSent < CONTROL_PERIOD_MS) return null;
        this.lastSent = nowMs;
        return keysToControl(this.keys);
    }
}
