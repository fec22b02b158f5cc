// Pure dashboard logic, kept DOM-free so it is unit-testable.

import type { AlertRow, DeviceRow, PolicyDraft, ReportKind } from "./types.js";

export type FieldError = { field: string; message: string };

/**
 * Merge a poll result into the existing feed.
 *
 * Rows already rendered are never dropped (connection hiccups must not
 * blank the feed); incoming rows replace existing ones with the same id
 * so acknowledgment state stays fresh. Result is newest-first.
 */
export function mergeAlerts(existing: AlertRow[], incoming: AlertRow[]): AlertRow[] {
    const byId = new Map<string, AlertRow>();
    for (const row of existing) byId.set(row.alert_id, row);
    for (const row of incoming) byId.set(row.alert_id, row);
    return [...byId.values()].sort((a, b) => {
        if (a.raised_at !== b.raised_at) return a.raised_at < b.raised_at ? 1 : -1;
        if (a.device_id !== b.device_id) return a.device_id < b.device_id ? 1 : -1;
        return a.alert_id < b.alert_id ? 1 : -1;
    });
}

export function markAcknowledged(feed: AlertRow[], alertId: string): AlertRow[] {
    return feed.map((row) =>
        row.alert_id === alertId
            ? { ...row, acknowledged: true, delivered: true }
            : row,
    );
}

const TOKEN = /^[\p{L}\p{N}]+$/u;
const LEVELS = new Set(["silent", "notify", "notify_capture"]);
const SOURCES = new Set(["trusted", "unknown"]);

/** Turn a comma/whitespace separated text field into a clean list. */
export function parseWordList(text: string): string[] {
    return text.split(/[\s,]+/).map((w) => w.trim()).filter((w) => w.length > 0);
}

/**
 * Client-side validation of a policy draft; the draft is submitted only
 * when this returns no errors.
 */
export function validateDraft(draft: PolicyDraft): FieldError[] {
    const errors: FieldError[] = [];
    for (const word of draft.restricted_words) {
        if (!TOKEN.test(word)) {
            errors.push({
                field: "restricted_words",
                message: `"${word}" is not a single word`,
            });
        }
    }
    if (!Number.isInteger(draft.max_social_time_s) || draft.max_social_time_s < 0) {
        errors.push({
            field: "max_social_time_s",
            message: "time threshold must be a non-negative whole number of seconds",
        });
    }
    if (draft.max_daily_wifi_bytes !== null &&
        (!Number.isInteger(draft.max_daily_wifi_bytes) || draft.max_daily_wifi_bytes < 0)) {
        errors.push({
            field: "max_daily_wifi_bytes",
            message: "data cap must be empty or a non-negative byte count",
        });
    }
    if (!(draft.baseline_factor > 1)) {
        errors.push({ field: "baseline_factor", message: "baseline factor must be above 1" });
    }
    if (!LEVELS.has(draft.alert_level)) {
        errors.push({ field: "alert_level", message: "unknown alert level" });
    }
    for (const source of draft.allowed_app_sources) {
        if (!SOURCES.has(source)) {
            errors.push({
                field: "allowed_app_sources",
                message: `"${source}" is not an app source`,
            });
        }
    }
    return errors;
}

export function staleness(
    device: DeviceRow, currentVersion: number,
): "current" | "stale" | "unknown" {
    if (device.policy_version_seen === null) return "unknown";
    return device.policy_version_seen >= currentVersion ? "current" : "stale";
}

export function reportUrl(
    base: string, device: string, kind: ReportKind,
    from: string, to: string, format: "json" | "csv",
): string {
    const query = new URLSearchParams({ from, to, format });
    return `${base}/v1/reports/${encodeURIComponent(device)}/${kind}?${query}`;
}

/** Default window for report viewers: the last 7 days, millisecond ISO. */
export function defaultWindow(now: Date = new Date()): { from: string; to: string } {
    const to = now.toISOString();
    const from = new Date(now.getTime() - 7 * 24 * 3600 * 1000).toISOString();
    return { from, to };
}
