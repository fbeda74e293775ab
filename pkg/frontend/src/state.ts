// Cockpit state: a pure view over received frames. No client-side physics —
// everything rendered comes from the server stream.

import { ServerFrame } from './protocol.js';

export type ConnectionStatus = 'connecting' | 'connected' | 'disconnected';

export interface CockpitState {
    status: ConnectionStatus;
    frame: ServerFrame | null;
    trail: Map<number, Array<[number, number]>>;
    ehmiBanner: string;
    style: string;
    intention: string | null;
    outcome: string | null;
    droppedFrames: number;
    sentInstructions: string[];
    lastError: string | null;
}

export const TRAIL_LIMIT = 600;

export function initialState(): CockpitState {
    return {
        status: 'connecting',
        frame: null,
        trail: new Map(),
        ehmiBanner: '',
        style: 'general',
        intention: null,
        outcome: null,
        droppedFrames: 0,
        sentInstructions: [],
        lastError: null,
    };
}

export function applyFrame(state: CockpitState, frame: ServerFrame): CockpitState {
    const trail = state.trail;
    for (const vehicle of frame.vehicles) {
        const points = trail.get(vehicle.id) ?? [];
        points.push([vehicle.x, vehicle.y]);
        if (points.length > TRAIL_LIMIT) points.shift();
        trail.set(vehicle.id, points);
    }
    return {
        ...state,
        frame,
        trail,
        ehmiBanner: frame.ehmi,
        style: frame.style,
        intention: frame.intention,
        outcome: frame.outcome ?? state.outcome,
    };
}

export function markDropped(state: CockpitState): CockpitState {
    // malformed frame: keep the previous scene, count the drop
    return { ...state, droppedFrames: state.droppedFrames + 1 };
}

export function markError(state: CockpitState, message: string): CockpitState {
    return { ...state, lastError: message };
}

export function setStatus(state: CockpitState, status: ConnectionStatus): CockpitState {
    return { ...state, status };
}

export function recordInstruction(state: CockpitState, text: string): CockpitState {
    return { ...state, sentInstructions: [...state.sentInstructions, text] };
}
