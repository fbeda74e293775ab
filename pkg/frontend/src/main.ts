import { SessionClient } from './client.js';
import { ControlTicker, CONTROL_PERIOD_MS } from './input.js';
import { renderHud, renderScene } from './render.js';

function byId<T extends HTMLElement>(id: string): T {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
}

const canvas = byId<HTMLCanvasElement>('scene');
const urlInput = byId<HTMLInputElement>('url');
const connectButton = byId<HTMLButtonElement>('connect');
const instructionInput = byId<HTMLInputElement>('instruction');
const sendButton = byId<HTMLButtonElement>('send');
const sentLog = byId<HTMLUListElement>('sent-log');

const hud = {
    banner: byId('ehmi-banner'),
    status: byId('status'),
    badges: byId('badges'),
    outcome: byId('outcome'),
    errors: byId('errors'),
};

const client = new SessionClient((url) => new WebSocket(url) as never);
const ticker = new ControlTicker();

client.onChange = (state) => {
    renderScene(canvas, state);
    renderHud(state, hud);
    sentLog.replaceChildren(...state.sentInstructions.map((text) => {
        const li = document.createElement('li');
        li.textContent = text;
        return li;
    }));
};

connectButton.addEventListener('click', () => client.connect(urlInput.value));

sendButton.addEventListener('click', () => {
    if (client.sendInstruction(instructionInput.value)) {
        instructionInput.value = '';
    }
});
instructionInput.addEventListener('keydown', (ev) => {
    if (ev.key === 'Enter') sendButton.click();
    ev.stopPropagation();
});

window.addEventListener('keydown', (ev) => ticker.setKey(ev.code, true));
window.addEventListener('keyup', (ev) => ticker.setKey(ev.code, false));

setInterval(() => {
    const message = ticker.tick(performance.now());
    if (message && client.state.status === 'connected') {
        client.send(message);
    }
}, CONTROL_PERIOD_MS / 2);
