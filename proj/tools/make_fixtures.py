#!/usr/bin/env python3
"""Builds the fixture event logs under fixtures/.

Each fixture is a two-week population of sessions whose per-stage counts are
the smallest integers that reproduce the target funnel percentages (see
fixtures/COUNTS.md). Records are shaped exactly like the gateway's log lines
and replay cleanly through the session engine.

    python3 tools/make_fixtures.py [--out fixtures]
"""

import argparse
import json
import os
import random

WINDOW_START = 1709510400000  # 2024-03-04T00:00:00Z
TWO_WEEKS_MS = 14 * 24 * 3600 * 1000
MINUTE = 60000


def fnv1a(text):
    h = 1469598103934665603
    for b in text.encode():
        h ^= b
        h = (h * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return h


def session_id(scenario, ip):
    return "s-%016x" % fnv1a("%s|%s|%d" % (scenario, ip, WINDOW_START))


def http(method, path, body=None, agent="Mozilla/5.0 (X11; Linux x86_64)"):
    raw = "%s %s HTTP/1.1\r\nHost: decoy\r\nUser-Agent: %s\r\n" % (method, path, agent)
    if body is not None:
        raw += "Content-Type: application/x-www-form-urlencoded\r\nContent-Length: %d\r\n" % len(body)
    return raw + "\r\n" + (body or "")


SQLI = "user=admin&pass=%27%20OR%20%271%27%3D%271%27%20--%20"
SQLI_WEAK = "user=admin&pass=admin%27"
WP_SQLI = "log=admin&pwd=%27%20OR%201%3D1%20--%20"
XSS_OK = "comment=%3Ca%20href%3D%22javascript%3Aalert(1)%22%3Edeal%3C%2Fa%3E"
XSS_BAD = "comment=%3Cscript%3Ealert(1)"


class Fixture:
    def __init__(self, scenario, ip_base, seed):
        self.scenario = scenario
        self.ip_base = ip_base
        self.rng = random.Random(seed)
        self.sessions = []  # (ip, steps, minutes or None)

    def add(self, steps, minutes=None):
        """steps: (protocol, action, success, raw, stage_before, stage_after)."""
        i = len(self.sessions)
        ip = "198.18.%d.%d" % (self.ip_base + i // 250, i % 250 + 1)
        self.sessions.append((ip, steps, minutes))

    def records(self, mean_dwell_min):
        total_ms = round(mean_dwell_min * len(self.sessions) * MINUTE)
        fixed = sum(round(m * MINUTE) for _, s, m in self.sessions if m is not None and len(s) > 1)
        elastic = [k for k, (_, s, m) in enumerate(self.sessions) if m is None and len(s) > 1]
        weights = [self.rng.uniform(0.6, 1.4) for _ in elastic]
        remaining = total_ms - fixed
        assert remaining > 0, "fixed dwell exceeds the target"
        durations = {}
        wsum = sum(weights)
        shares = [int(remaining * w / wsum) for w in weights]
        for n in range(remaining - sum(shares)):
            shares[n % len(shares)] += 1
        for k, d in zip(elastic, shares):
            durations[k] = d
        out = []
        for k, (ip, steps, minutes) in enumerate(self.sessions):
            if len(steps) == 1:
                d = 0
            elif minutes is not None:
                d = round(minutes * MINUTE)
            else:
                d = durations[k]
            start = WINDOW_START + self.rng.randrange(0, TWO_WEEKS_MS - d - MINUTE)
            sid = session_id(self.scenario, ip)
            prev = None
            for seq, (proto, action, success, raw, before, after) in enumerate(steps):
                ts = start + (d * seq // (len(steps) - 1) if len(steps) > 1 else 0)
                out.append({
                    "kind": "event",
                    "scenario": self.scenario,
                    "session_id": sid,
                    "source_ip": ip,
                    "seq": seq,
                    "ts": ts,
                    "protocol": proto,
                    "action": action,
                    "success": success,
                    "stage_before": before,
                    "stage_after": after,
                    "raw_excerpt": raw,
                    "inter_event_ms": 0 if prev is None else ts - prev,
                    "scanner": False,
                })
                prev = ts
        out.sort(key=lambda r: (r["ts"], r["source_ip"], r["seq"]))
        return out


class Walk:
    """Accumulates steps while tracking the current stage."""

    def __init__(self, stage):
        self.stage = stage
        self.steps = []

    def do(self, proto, action, success, raw, to=None):
        after = to or self.stage
        self.steps.append((proto, action, success, raw, self.stage, after))
        self.stage = after
        return self


def shop():
    f = Fixture("shop", 0, 1701)
    r = f.rng

    def admin_tail(w, second_site):
        w.do("HTTP", "AdminAccess", True, http("GET", "/admin"))
        w.do("HTTP", "FileDownload", True, http("GET", "/admin/database.db"), "database")
        if second_site:
            w.do("HTTP", "PageFetch", True, http("GET", "/outlet/"))
            w.do("HTTP", "SqlInjectionAttempt", True, http("POST", "/outlet/login", SQLI), "second_site")
        return w

    # 35 direct SQLi admins, 20 via the login page; 13 of the 55 move on to the outlet.
    for i in range(55):
        w = Walk("shop_front").do("HTTP", "PageFetch", True, http("GET", "/"))
        if i >= 35:
            w.do("HTTP", "PageFetch", True, http("GET", "/login"), "login")
        w.do("HTTP", "SqlInjectionAttempt", True, http("POST", "/login", SQLI), "admin")
        f.add(admin_tail(w, i % 4 == 0 and i < 52).steps)
    # robots.txt readers: 2 reach the admin page, 7 do not.
    for i in range(9):
        w = Walk("shop_front").do("HTTP", "PageFetch", True, http("GET", "/"))
        w.do("HTTP", "RobotsFetch", True, http("GET", "/robots.txt"), "admin_disclosed")
        w.do("HTTP", "AdminAccess", False, http("GET", "/admin"))
        if i < 2:
            w.do("HTTP", "LoginAttempt", True, http("POST", "/login", "token=sb-staff-7731"), "admin")
            admin_tail(w, False)
            f.add(w.steps)
        else:
            if i >= 6:
                w.do("HTTP", "PageFetch", True, http("GET", "/login"), "login")
            f.add(w.steps, r.uniform(4, 14))
    # JavaScript checker readers: 4 recover the token, 5 guess, 1 only looks.
    for i in range(10):
        w = Walk("shop_front").do("HTTP", "PageFetch", True, http("GET", "/"))
        w.do("HTTP", "PageFetch", True, http("GET", "/js/passcheck.js"))
        if i < 4:
            w.do("HTTP", "LoginAttempt", True, http("POST", "/login", "token=sb-staff-7731"), "admin")
            f.add(admin_tail(w, False).steps)
        else:
            if i < 9:
                w.do("HTTP", "LoginAttempt", False, http("POST", "/login", "token=admin123"))
            f.add(w.steps, r.uniform(3, 12))
    # Stored XSS: 2 succeed, 29 fail (10 of them from the reviews page).
    for i in range(31):
        w = Walk("shop_front").do("HTTP", "PageFetch", True, http("GET", "/"))
        if i < 2:
            w.do("HTTP", "XssAttempt", True, http("POST", "/comments", XSS_OK), "xss_planted")
            f.add(w.steps)
            continue
        if i >= 21:
            w.do("HTTP", "PageFetch", True, http("GET", "/reviews"), "reviews")
        w.do("HTTP", "XssAttempt", False, http("POST", "/comments", XSS_BAD))
        f.add(w.steps, r.uniform(3, 15))
    # One failed SQLi; one outlet staff login that the shop story ignores.
    f.add(Walk("shop_front").do("HTTP", "PageFetch", True, http("GET", "/"))
          .do("HTTP", "SqlInjectionAttempt", False, http("POST", "/login", SQLI_WEAK)).steps, 6.5)
    f.add(Walk("shop_front").do("HTTP", "PageFetch", True, http("GET", "/outlet/js/passcheck.js"))
          .do("HTTP", "LoginAttempt", True, http("POST", "/outlet/login", "token=outlet-2231")).steps, 2.0)
    # Browsers that never attack: 97 stay on the front page, 26 open the login page.
    for i in range(97):
        w = Walk("shop_front").do("HTTP", "PageFetch", True, http("GET", "/"))
        for _ in range(r.randrange(0, 3)):
            w.do("HTTP", "PageFetch", True, http("GET", "/assets/site.css"))
        f.add(w.steps, r.uniform(0.5, 5))
    for i in range(26):
        w = Walk("shop_front").do("HTTP", "PageFetch", True, http("GET", "/"))
        w.do("HTTP", "PageFetch", True, http("GET", "/login"), "login")
        f.add(w.steps, r.uniform(1, 8))
    assert len(f.sessions) == 230
    return f, 29.6


def ftp():
    f = Fixture("ftp", 10, 1702)
    r = f.rng

    def login(w, ok, user="anonymous", pw="guest@example.org"):
        w.do("FTP", "FtpLogin", ok, "USER %s\r\nPASS %s" % (user, pw), "logged_in" if ok else None)
        return w

    def retr(w, name, to):
        w.do("FTP", "Other", True, "PASV")
        w.do("FTP", "FileDownload", True, "RETR " + name, to)
        return w

    # 163 logins: 110 read Database.DB, 21 the nmap scan, 32 confidential.csv.
    for i in range(110):
        w = login(Walk("ftp_entry"), True)
        w.do("FTP", "Other", True, "PASV").do("FTP", "Other", True, "LIST")
        retr(w, "Database.DB", "database_read")
        if i < 73:
            w.do("HTTP", "PageFetch", True, http("GET", "/wp-login.php"))
            w.do("HTTP", "SqlInjectionAttempt", i % 5 != 0, http("POST", "/wp-login.php", WP_SQLI), "wordpress")
        elif i < 76:
            w.do("HTTP", "XssAttempt", False, http("POST", "/comments", XSS_BAD), "wordpress_xss")
        f.add(w.steps)
    for i in range(21):
        f.add(retr(login(Walk("ftp_entry"), True), "nmap_scan.txt", "scan_read").steps)
    for i in range(32):
        f.add(retr(login(Walk("ftp_entry"), True, "admin", "admin"), "confidential.csv", "confidential_read").steps)
    # 626 sessions never log in; most are single-shot bots.
    bots = [("root", "root"), ("admin", "password"), ("ftp", "ftp"), ("user", "123456"), ("test", "test")]
    for i in range(626):
        w = Walk("ftp_entry")
        for _ in range(1 if i < 450 else r.randrange(2, 6)):
            user, pw = bots[r.randrange(len(bots))]
            login(w, False, user, pw)
        f.add(w.steps, r.uniform(0.2, 3.0))
    assert len(f.sessions) == 789
    return f, 9.36


def iot():
    f = Fixture("iot", 20, 1703)
    r = f.rng

    def ssh_login(w, user, host, pw, ok, to=None):
        w.do("SSH", "SshLogin", ok, "login %s@%s %s" % (user, host, pw), to if ok else None)
        return w

    def broker(w):
        w.do("MQTT", "MqttConnect", True, "CONNECT client_id=mqtt-explorer username=telemetry password=Upl1nk!2019",
             "broker")
        w.do("MQTT", "FileDownload", True, "SUBSCRIBE topic=fs/nmap_scan.txt", "scan_read")
        return w

    # 359 device logins; 39 reach the broker and all of them read the scan.
    for i in range(359):
        w = ssh_login(Walk("iot_front"), "pi" if i % 3 else "root", "sensor-01",
                      "raspberry" if i % 3 else "root", True, "device_access")
        w.do("SSH", "Other", True, "ls")
        w.do("SSH", "FileDownload", True, "cat broker_credentials.txt")
        if i < 39:
            broker(w)
            if i < 22:
                if i % 2:
                    w.do("HTTP", "SqlInjectionAttempt", True, http("POST", "/login", SQLI), "deceptive_targets")
                else:
                    w.do("FTP", "FtpLogin", True, "USER anonymous\r\nPASS guest@example.org", "deceptive_targets")
            elif i == 22:
                ssh_login(w, "root", "node-01", "root", True, "iot_nodes")
                for n in range(2, 6):
                    ssh_login(w, "root", "node-0%d" % n, "root", True)
        elif i % 4 == 0:
            w.do("MQTT", "MqttConnect", False, "CONNECT client_id=probe username=admin password=admin")
        f.add(w.steps)
    # 725 sessions never get past the login prompt.
    guesses = [("admin", "admin"), ("root", "12345"), ("ubnt", "ubnt"), ("support", "support"), ("root", "vizxv")]
    for i in range(725):
        w = Walk("iot_front")
        for _ in range(1 if i < 500 else r.randrange(2, 4)):
            user, pw = guesses[r.randrange(len(guesses))]
            ssh_login(w, user, "sensor-01", pw, False)
        f.add(w.steps, r.uniform(0.3, 6.0))
    assert len(f.sessions) == 1084
    return f, 41.3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "fixtures"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for build in (shop, ftp, iot):
        fixture, dwell = build()
        records = fixture.records(dwell)
        path = os.path.join(args.out, "%s.events.jsonl" % fixture.scenario)
        with open(path, "w", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")
        print("%s: %d sessions, %d records" % (path, len(fixture.sessions), len(records)))


if __name__ == "__main__":
    main()
