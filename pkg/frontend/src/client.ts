// Session client: socket wiring plus the state updates it triggers.
// The WebSocket constructor is injectable so tests can run under node.

import { parseFrame, ClientMessage } from './protocol.js';
import {
    CockpitState,
    applyFrame,
    initialState,
    markDropped,
    markError,
    recordInstruction,
    setStatus,
} from './state.js';

export type SocketLike = {
    send(data: string): void;
    close(): void;
    onopen: ((ev?: unknown) => void) | null;
    onclose: ((ev?: unknown) => void) | null;
    onmessage: ((ev: { data: unknown }) => void) | null;
    onerror: ((ev?: unknown) => void) | null;
};

export type SocketFactory = (url: string) => SocketLike;

export class SessionClient {
    state: CockpitState = initialState();
    onChange: ((state: CockpitState) => void) | null = null;
    private socket: SocketLike | null = null;

    constructor(private makeSocket: SocketFactory) {}

    connect(url: string): void {
        this.update(setStatus(this.state, 'connecting'));
        const socket = this.makeSocket(url);
        this.socket = socket;
        socket.onopen = () => this.update(setStatus(this.state, 'connected'));
        socket.onclose = () => this.update(setStatus(this.state, 'disconnected'));
        socket.onerror = () => this.update(setStatus(this.state, 'disconnected'));
        socket.onmessage = (ev) => this.receive(String(ev.data));
    }

    receive(raw: string): void {
        const frame = parseFrame(raw);
        if (frame === null) {
            this.update(markDropped(this.state));
            return;
        }
        if ('error' in frame) {
            this.update(markError(this.state, frame.error));
            return;
        }
        this.update(applyFrame(this.state, frame));
    }

    /** Sends when connected; drops (and reports) otherwise. */
    send(message: ClientMessage): boolean {
        if (this.state.status !== 'connected' || this.socket === null) {
            this.update(markError(this.state, 'not connected: message dropped'));
            return false;
        }
        this.socket.send(JSON.stringify(message));
        return true;
    }

    sendInstruction(text: string): boolean {
        if (text === '') return false;   // empty instruction is a no-op
        const sent = this.send({ type: 'instruction', text });
        if (sent) this.update(recordInstruction(this.state, text));
        return sent;
    }

    close(): void {
        this.socket?.close();
    }

    private update(next: CockpitState): void {
        this.state = next;
        this.onChange?.(next);
    }
}
