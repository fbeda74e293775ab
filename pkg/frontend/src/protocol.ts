// Wire types shared with the session server. One JSON object per text frame.

export interface VehicleState {
    id: number;
    role: 'AV' | 'HV';
    x: number;
    y: number;
    heading: number;
    v: number;
}

export interface ServerFrame {
    t: number;
    vehicles: VehicleState[];
    ehmi: string;
    style: string;
    intention: string | null;
    metrics: Record<string, number>;
    outcome?: string;
}

export interface ErrorFrame {
    error: string;
}

export type ControlMessage = { type: 'control'; accel: number };
export type InstructionMessage = { type: 'instruction'; text: string };
export type ClientMessage = ControlMessage | InstructionMessage;

export function parseFrame(raw: string): ServerFrame | ErrorFrame | null {
    let data: unknown;
    try {
        data = JSON.parse(raw);
    } catch {
        return null;
    }
    if (typeof data !== 'object' || data === null) return null;
    const obj = data as Record<string, unknown>;
    if (typeof obj.error === 'string') return { error: obj.error };
    if (!isValidFrame(obj)) return null;
    return obj as unknown as ServerFrame;
}

export function isValidFrame(obj: Record<string, unknown>): boolean {
    if (typeof obj.t !== 'number' || !Array.isArray(obj.vehicles)) return false;
    if (typeof obj.ehmi !== 'string' || typeof obj.style !== 'string') return false;
    if (obj.intention !== null && typeof obj.intention !== 'string') return false;
    for (const v of obj.vehicles) {
        if (typeof v !== 'object' || v === null) return false;
        const veh = v as Record<string, unknown>;
        if (typeof veh.id !== 'number' || (veh.role !== 'AV' && veh.role !== 'HV')) return false;
        for (const key of ['x', 'y', 'heading', 'v']) {
            if (typeof veh[key] !== 'number') return false;
        }
    }
    return true;
}
