// Top-down canvas view. Vehicles are oriented rectangles (ego in blue),
// traveled paths appear as trails, the conflict area sits at the scene
// origin. Everything drawn comes from server frames.

import { CockpitState } from './state.js';

const SCALE = 7;              // px per meter
const VEHICLE_LENGTH = 4.0;   // m
const VEHICLE_WIDTH = 1.8;    // m
const ZONE_RADIUS = 3.0;      // m, conflict area around the origin

const EGO_COLOR = '#1d3557';
const OPPONENT_COLOR = '#2a9d8f';
const TRAIL_COLOR = 'rgba(140, 150, 160, 0.45)';
const ZONE_COLOR = '#e76f51';

function toCanvas(canvas: HTMLCanvasElement, x: number, y: number): [number, number] {
    return [canvas.width / 2 + x * SCALE, canvas.height / 2 - y * SCALE];
}

export function renderScene(canvas: HTMLCanvasElement, state: CockpitState): void {
    const ctx = canvas.getContext('2d');
    if (!ctx) return;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.fillStyle = '#f7f5f0';
    ctx.fillRect(0, 0, canvas.width, canvas.height);

    // conflict area
    const [zx, zy] = toCanvas(canvas, 0, 0);
    ctx.beginPath();
    ctx.setLineDash([4, 4]);
    ctx.strokeStyle = ZONE_COLOR;
    ctx.arc(zx, zy, ZONE_RADIUS * SCALE, 0, Math.PI * 2);
    ctx.stroke();
    ctx.setLineDash([]);

    // trails
    for (const points of state.trail.values()) {
        if (points.length < 2) continue;
        ctx.beginPath();
        ctx.strokeStyle = TRAIL_COLOR;
        ctx.lineWidth = 2;
        const [x0, y0] = toCanvas(canvas, points[0][0], points[0][1]);
        ctx.moveTo(x0, y0);
        for (const [px, py] of points) {
            const [cx, cy] = toCanvas(canvas, px, py);
            ctx.lineTo(cx, cy);
        }
        ctx.stroke();
    }

    const frame = state.frame;
    if (!frame) return;
    for (const vehicle of frame.vehicles) {
        const [cx, cy] = toCanvas(canvas, vehicle.x, vehicle.y);
        ctx.save();
        ctx.translate(cx, cy);
        ctx.rotate(-vehicle.heading);
        ctx.fillStyle = vehicle.role === 'AV' ? EGO_COLOR : OPPONENT_COLOR;
        ctx.fillRect(-VEHICLE_LENGTH * SCALE / 2, -VEHICLE_WIDTH * SCALE / 2,
            VEHICLE_LENGTH * SCALE, VEHICLE_WIDTH * SCALE);
        ctx.restore();
        ctx.fillStyle = '#333';
        ctx.font = '11px sans-serif';
        ctx.fillText(`${vehicle.role}${vehicle.id} ${vehicle.v.toFixed(1)} m/s`,
            cx + 10, cy - 8);
    }
}

export function renderHud(state: CockpitState, elements: {
    banner: HTMLElement;
    status: HTMLElement;
    badges: HTMLElement;
    outcome: HTMLElement;
    errors: HTMLElement;
}): void {
    elements.banner.textContent = state.ehmiBanner || '—';
    elements.status.textContent = state.status;
    elements.status.className = `status ${state.status}`;
    const intention = state.intention ?? 'unknown';
    elements.badges.textContent = `style: ${state.style} | intention: ${intention}`;
    elements.outcome.textContent = state.outcome ? `episode: ${state.outcome}` : '';
    elements.errors.textContent = state.droppedFrames > 0
        ? `dropped frames: ${state.droppedFrames}` : '';
}
