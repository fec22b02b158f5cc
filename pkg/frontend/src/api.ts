// Thin typed client over the reporting server's JSON API.

import type {
    AlertRow, DevicesResponse, Policy, PolicyDraft, Report, ReportKind,
} from "./types.js";

export class ApiError extends Error {
    constructor(readonly status: number, message: string) {
        super(message);
    }
}

async function asJson<T>(response: Response): Promise<T> {
    if (!response.ok) {
        let message = `HTTP ${response.status}`;
        try {
            const body = await response.json();
            if (body && typeof body.error === "string") message = body.error;
        } catch {
            // keep the status line
        }
        throw new ApiError(response.status, message);
    }
    return response.json() as Promise<T>;
}

export class ApiClient {
    constructor(readonly base: string = "") {}

    getPolicy(): Promise<Policy> {
        return fetch(`${this.base}/v1/policy`).then((r) => asJson<Policy>(r));
    }

    async putPolicy(draft: PolicyDraft): Promise<number> {
        const response = await fetch(`${this.base}/v1/policy`, {
            method: "PUT",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(draft),
        });
        const body = await asJson<{ version: number }>(response);
        return body.version;
    }

    getDevices(): Promise<DevicesResponse> {
        return fetch(`${this.base}/v1/devices`).then((r) => asJson<DevicesResponse>(r));
    }

    async getAlerts(since?: string): Promise<AlertRow[]> {
        const query = since ? `?since=${encodeURIComponent(since)}` : "";
        const body = await fetch(`${this.base}/v1/alerts${query}`)
            .then((r) => asJson<{ alerts: AlertRow[] }>(r));
        return body.alerts;
    }

    async ackAlert(alertId: string): Promise<void> {
        const response = await fetch(
            `${this.base}/v1/alerts/${encodeURIComponent(alertId)}/ack`,
            { method: "POST" });
        await asJson<{ acknowledged: boolean }>(response);
    }

    getReport(device: string, kind: ReportKind, from: string, to: string): Promise<Report> {
        const query = new URLSearchParams({ from, to, format: "json" });
        return fetch(`${this.base}/v1/reports/${encodeURIComponent(device)}/${kind}?${query}`)
            .then((r) => asJson<Report>(r));
    }
}
