// Dashboard wiring: polling loops, tables, and the policy form.

import { ApiClient, ApiError } from "./api.js";
import {
    defaultWindow, markAcknowledged, mergeAlerts, parseWordList, reportUrl,
    staleness, validateDraft,
} from "./state.js";
import type { AlertRow, PolicyDraft, ReportKind } from "./types.js";
import { REPORT_KINDS } from "./types.js";

const POLL_INTERVAL_MS = 2000;

const api = new ApiClient("");
let feed: AlertRow[] = [];
let currentVersion = 0;
let deviceIds: string[] = [];

const $ = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
};

function setBanner(message: string | null): void {
    const banner = $("banner");
    banner.textContent = message ?? "";
    banner.style.display = message ? "block" : "none";
}

function cell(text: string, className?: string): HTMLTableCellElement {
    const td = document.createElement("td");
    td.textContent = text;
    if (className) td.className = className;
    return td;
}

// --- alert feed ---

function renderFeed(): void {
    const tbody = $("alert-rows");
    tbody.replaceChildren();
    for (const alert of feed) {
        const tr = document.createElement("tr");
        if (!alert.acknowledged) tr.className = "unacked";
        tr.append(
            cell(alert.raised_at),
            cell(alert.device_id),
            cell(alert.rule_id),
            cell(alert.severity, alert.severity === "high" ? "sev-high" : ""),
            cell(alert.detail),
            cell(alert.delivered ? "yes" : "no"),
        );
        const actions = document.createElement("td");
        if (alert.acknowledged) {
            actions.textContent = "acknowledged";
        } else {
            const button = document.createElement("button");
            button.textContent = "ack";
            button.addEventListener("click", async () => {
                button.disabled = true;
                try {
                    await api.ackAlert(alert.alert_id);
                    feed = markAcknowledged(feed, alert.alert_id);
                    renderFeed();
                } catch (err) {
                    button.disabled = false;
                    setBanner(`acknowledge failed: ${String(err)}`);
                }
            });
            actions.append(button);
        }
        tr.append(actions);
        tbody.append(tr);
    }
    $("alert-count").textContent =
        `${feed.length} alerts, ${feed.filter((a) => !a.acknowledged).length} unacknowledged`;
}

async function pollAlerts(): Promise<void> {
    try {
        const incoming = await api.getAlerts();
        feed = mergeAlerts(feed, incoming);
        setBanner(null);
        renderFeed();
    } catch {
        // keep the rendered feed; show the outage and retry on the next tick
        setBanner("server unreachable — retrying");
    }
}

// --- devices ---

async function pollDevices(): Promise<void> {
    try {
        const body = await api.getDevices();
        currentVersion = body.current_policy_version;
        deviceIds = body.devices.map((d) => d.device_id);
        const tbody = $("device-rows");
        tbody.replaceChildren();
        for (const device of body.devices) {
            const tr = document.createElement("tr");
            tr.append(
                cell(device.device_id),
                cell(device.last_seen ?? "never"),
                cell(String(device.event_count)),
                cell(String(device.alert_count)),
                cell(`policy ${staleness(device, currentVersion)}`),
                cell(device.gaps.length ? JSON.stringify(device.gaps) : "none"),
            );
            tbody.append(tr);
        }
        const select = $("report-device") as HTMLSelectElement;
        const chosen = select.value;
        select.replaceChildren();
        for (const id of deviceIds) {
            const option = document.createElement("option");
            option.value = id;
            option.textContent = id;
            select.append(option);
        }
        if (deviceIds.includes(chosen)) select.value = chosen;
    } catch {
        setBanner("server unreachable — retrying");
    }
}

// --- policy editor ---

function readDraft(): PolicyDraft {
    const capText = ($("policy-cap") as HTMLInputElement).value.trim();
    return {
        restricted_words: parseWordList(($("policy-words") as HTMLInputElement).value),
        blocked_url_substrings: parseWordList(($("policy-urls") as HTMLInputElement).value),
        blocked_groups: parseWordList(($("policy-groups") as HTMLInputElement).value),
        call_blocklist: parseWordList(($("policy-calls") as HTMLInputElement).value),
        allowed_app_sources: ($("policy-untrusted") as HTMLInputElement).checked
            ? ["trusted", "unknown"] : ["trusted"],
        max_social_time_s: Number(($("policy-time") as HTMLInputElement).value),
        max_daily_wifi_bytes: capText === "" ? null : Number(capText),
        baseline_factor: Number(($("policy-factor") as HTMLInputElement).value),
        alert_level: ($("policy-level") as HTMLSelectElement).value as
            PolicyDraft["alert_level"],
    };
}

async function loadPolicy(): Promise<void> {
    const policy = await api.getPolicy();
    ($("policy-words") as HTMLInputElement).value = policy.restricted_words.join(", ");
    ($("policy-urls") as HTMLInputElement).value = policy.blocked_url_substrings.join(", ");
    ($("policy-groups") as HTMLInputElement).value = policy.blocked_groups.join(", ");
    ($("policy-calls") as HTMLInputElement).value = policy.call_blocklist.join(", ");
    ($("policy-untrusted") as HTMLInputElement).checked =
        policy.allowed_app_sources.includes("unknown");
    ($("policy-time") as HTMLInputElement).value = String(policy.max_social_time_s);
    ($("policy-cap") as HTMLInputElement).value =
        policy.max_daily_wifi_bytes === null ? "" : String(policy.max_daily_wifi_bytes);
    ($("policy-factor") as HTMLInputElement).value = String(policy.baseline_factor);
    ($("policy-level") as HTMLSelectElement).value = policy.alert_level;
    $("policy-version").textContent = `version ${policy.version}`;
}

async function savePolicy(): Promise<void> {
    const errors = $("policy-errors");
    errors.replaceChildren();
    const draft = readDraft();
    const problems = validateDraft(draft);
    if (problems.length > 0) {
        for (const problem of problems) {
            const li = document.createElement("li");
            li.textContent = `${problem.field}: ${problem.message}`;
            errors.append(li);
        }
        return; // invalid drafts never leave the browser
    }
    try {
        const version = await api.putPolicy(draft);
        $("policy-version").textContent = `version ${version}`;
    } catch (err) {
        const li = document.createElement("li");
        li.textContent = err instanceof ApiError ? err.message : String(err);
        errors.append(li);
    }
}

// --- report viewer ---

async function loadReport(): Promise<void> {
    const device = ($("report-device") as HTMLSelectElement).value;
    const kind = ($("report-kind") as HTMLSelectElement).value as ReportKind;
    const from = ($("report-from") as HTMLInputElement).value;
    const to = ($("report-to") as HTMLInputElement).value;
    const status = $("report-status");
    try {
        const report = await api.getReport(device, kind, from, to);
        status.textContent = `${report.rows.length} rows (generated ${report.generated_at})`;
        const head = $("report-head");
        const body = $("report-body");
        head.replaceChildren();
        body.replaceChildren();
        const columns = report.rows.length > 0 ? Object.keys(report.rows[0]) : [];
        const headRow = document.createElement("tr");
        for (const column of columns) {
            const th = document.createElement("th");
            th.textContent = column;
            headRow.append(th);
        }
        head.append(headRow);
        for (const row of report.rows) {
            const tr = document.createElement("tr");
            for (const column of columns) {
                const value = row[column];
                tr.append(cell(typeof value === "object" && value !== null
                    ? JSON.stringify(value) : String(value ?? "")));
            }
            body.append(tr);
        }
        ($("report-csv") as HTMLAnchorElement).href =
            reportUrl("", device, kind, from, to, "csv");
    } catch (err) {
        status.textContent = err instanceof ApiError ? err.message : String(err);
    }
}

// --- boot ---

export function boot(): void {
    const kindSelect = $("report-kind") as HTMLSelectElement;
    for (const kind of REPORT_KINDS) {
        const option = document.createElement("option");
        option.value = kind;
        option.textContent = kind;
        kindSelect.append(option);
    }
    const window7 = defaultWindow();
    ($("report-from") as HTMLInputElement).value = window7.from;
    ($("report-to") as HTMLInputElement).value = window7.to;

    $("policy-save").addEventListener("click", () => void savePolicy());
    $("policy-reload").addEventListener("click", () => void loadPolicy());
    $("report-load").addEventListener("click", () => void loadReport());

    void loadPolicy().catch(() => setBanner("server unreachable — retrying"));
    void pollAlerts();
    void pollDevices();
    setInterval(() => void pollAlerts(), POLL_INTERVAL_MS);
    setInterval(() => void pollDevices(), POLL_INTERVAL_MS);
}

boot();
