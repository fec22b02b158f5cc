// Wire shapes of the reporting server's JSON API.

export type AlertRow = {
    alert_id: string;
    device_id: string;
    rule_id: string;
    severity: "low" | "high";
    detail: string;
    raised_at: string;
    delivered: boolean;
    acknowledged: boolean;
    ref: Record<string, unknown>;
};

export type DeviceRow = {
    device_id: string;
    last_seen: string | null;
    event_count: number;
    alert_count: number;
    capture_count: number;
    policy_version_seen: number | null;
    gaps: number[][];
};

export type DevicesResponse = {
    devices: DeviceRow[];
    current_policy_version: number;
};

export type AlertLevel = "silent" | "notify" | "notify_capture";

export type Policy = {
    version: number;
    restricted_words: string[];
    blocked_url_substrings: string[];
    blocked_groups: string[];
    call_blocklist: string[];
    allowed_app_sources: string[];
    max_social_time_s: number;
    max_daily_wifi_bytes: number | null;
    baseline_factor: number;
    alert_level: AlertLevel;
};

export type PolicyDraft = Omit<Policy, "version">;

export type Report = {
    kind: string;
    device_id: string;
    window: { from: string; to: string };
    generated_at: string;
    rows: Record<string, unknown>[];
};

export const REPORT_KINDS = [
    "screens", "apps", "software", "keylog", "calls_sms", "social",
] as const;

export type ReportKind = (typeof REPORT_KINDS)[number];
