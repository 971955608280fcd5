#!/usr/bin/env python3
"""Generate deterministic connection-record fixtures in NSL-KDD file format.

Each output line carries the 41 features, a label and a difficulty tag.
Class mixes are fixed by construction; rerun this script and the files are
reproduced byte for byte.
"""

import random
from pathlib import Path

SEED = 20250809
OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

FEATURES = [
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
]

TRAIN_ATTACKS = {
    "DoS": ["neptune", "smurf", "back", "teardrop", "pod", "land"],
    "Probe": ["satan", "ipsweep", "nmap", "portsweep"],
    "R2L": ["guess_passwd", "ftp_write", "imap", "phf", "multihop", "warezmaster",
            "warezclient", "spy"],
    "U2R": ["buffer_overflow", "loadmodule", "rootkit", "perl"],
}
TEST_ONLY_ATTACKS = {
    "DoS": ["apache2", "udpstorm", "processtable", "mailbomb"],
    "Probe": ["mscan", "saint"],
    "R2L": ["xlock", "xsnoop", "snmpguess", "snmpgetattack", "httptunnel", "sendmail",
            "named", "worm"],
    "U2R": ["sqlattack", "xterm", "ps"],
}

NORMAL_SERVICES = ["http", "smtp", "domain_u", "ftp_data", "ftp", "telnet", "pop_3",
                   "ssh", "finger", "auth", "X11", "ntp_u"]
TEST_ONLY_SERVICES = ["aol", "harvest"]  # absent from the training vocabulary on purpose


def rr(rng, lo, hi):
    return f"{rng.uniform(lo, hi):.2f}"


def base_record(rng):
    r = {name: "0" for name in FEATURES}
    for name in FEATURES:
        if "rate" in name:
            r[name] = "0.00"
    r["dst_host_count"] = str(rng.randint(1, 255))
    r["dst_host_srv_count"] = str(rng.randint(1, 255))
    return r


def normal_record(rng):
    r = base_record(rng)
    r["duration"] = "0" if rng.random() < 0.6 else str(rng.randint(1, 60))
    r["protocol_type"] = rng.choices(["tcp", "udp", "icmp"], weights=[70, 25, 5])[0]
    r["service"] = rng.choices(NORMAL_SERVICES,
                               weights=[45, 12, 10, 8, 5, 4, 4, 4, 3, 2, 2, 1])[0]
    r["flag"] = rng.choices(["SF", "REJ", "S1"], weights=[95, 3, 2])[0]
    r["src_bytes"] = str(rng.randint(100, 5000))
    r["dst_bytes"] = str(rng.randint(0, 20000))
    r["logged_in"] = "1" if rng.random() < 0.75 else "0"
    r["count"] = str(rng.randint(1, 30))
    r["srv_count"] = str(rng.randint(1, 30))
    r["serror_rate"] = rr(rng, 0.0, 0.05)
    r["srv_serror_rate"] = rr(rng, 0.0, 0.05)
    r["same_srv_rate"] = rr(rng, 0.8, 1.0)
    r["diff_srv_rate"] = rr(rng, 0.0, 0.1)
    r["dst_host_same_srv_rate"] = rr(rng, 0.7, 1.0)
    r["dst_host_diff_srv_rate"] = rr(rng, 0.0, 0.1)
    r["dst_host_same_src_port_rate"] = rr(rng, 0.0, 0.3)
    return r


def dos_record(rng):
    r = base_record(rng)
    style = rng.random()
    if style < 0.5:  # syn-flood shaped
        r["protocol_type"] = "tcp"
        r["service"] = rng.choice(["private", "http", "telnet"])
        r["flag"] = rng.choice(["S0", "S0", "REJ"])
        r["count"] = str(rng.randint(100, 511))
        r["srv_count"] = str(rng.randint(1, 20))
        r["serror_rate"] = rr(rng, 0.9, 1.0)
        r["srv_serror_rate"] = rr(rng, 0.9, 1.0)
        r["dst_host_serror_rate"] = rr(rng, 0.9, 1.0)
        r["dst_host_srv_serror_rate"] = rr(rng, 0.9, 1.0)
        r["same_srv_rate"] = rr(rng, 0.0, 0.1)
    elif style < 0.8:  # icmp-flood shaped
        r["protocol_type"] = "icmp"
        r["service"] = rng.choice(["ecr_i", "eco_i"])
        r["flag"] = "SF"
        r["src_bytes"] = str(rng.randint(520, 1480))
        r["count"] = str(rng.randint(200, 511))
        r["srv_count"] = str(rng.randint(200, 511))
        r["same_srv_rate"] = "1.00"
        r["dst_host_same_srv_rate"] = "1.00"
    else:  # oversized-request shaped
        r["protocol_type"] = "tcp"
        r["service"] = "http"
        r["flag"] = "SF"
        r["src_bytes"] = str(rng.randint(40000, 60000))
        r["dst_bytes"] = str(rng.randint(2000, 9000))
        r["hot"] = str(rng.randint(1, 3))
        r["count"] = str(rng.randint(2, 10))
    return r


def probe_record(rng, services_extra):
    r = base_record(rng)
    r["protocol_type"] = rng.choices(["tcp", "icmp", "udp"], weights=[60, 30, 10])[0]
    r["service"] = rng.choice(["eco_i", "private", "ftp_data", "domain_u"] + services_extra)
    r["flag"] = rng.choice(["SF", "REJ", "S0", "RSTR"])
    r["duration"] = "0"
    r["src_bytes"] = str(rng.randint(0, 40))
    r["count"] = str(rng.randint(1, 15))
    r["srv_count"] = str(rng.randint(1, 15))
    r["diff_srv_rate"] = rr(rng, 0.5, 1.0)
    r["same_srv_rate"] = rr(rng, 0.0, 0.3)
    r["rerror_rate"] = rr(rng, 0.2, 0.9)
    r["srv_rerror_rate"] = rr(rng, 0.2, 0.9)
    r["dst_host_diff_srv_rate"] = rr(rng, 0.5, 1.0)
    r["dst_host_same_src_port_rate"] = rr(rng, 0.5, 1.0)
    r["dst_host_rerror_rate"] = rr(rng, 0.2, 0.9)
    return r


def r2l_record(rng):
    r = base_record(rng)
    r["protocol_type"] = "tcp"
    r["service"] = rng.choice(["ftp", "telnet", "imap4", "pop_3", "http"])
    r["flag"] = rng.choice(["SF", "SF", "RSTO"])
    r["duration"] = str(rng.randint(1, 300))
    r["src_bytes"] = str(rng.randint(100, 2000))
    r["dst_bytes"] = str(rng.randint(100, 5000))
    if rng.random() < 0.5:
        r["num_failed_logins"] = str(rng.randint(1, 5))
    r["is_guest_login"] = "1" if rng.random() < 0.5 else "0"
    if rng.random() < 0.6:
        r["hot"] = str(rng.randint(1, 10))
    r["logged_in"] = "1" if rng.random() < 0.5 else "0"
    r["count"] = str(rng.randint(1, 5))
    r["srv_count"] = str(rng.randint(1, 5))
    r["same_srv_rate"] = rr(rng, 0.5, 1.0)
    return r


def u2r_record(rng):
    r = base_record(rng)
    r["protocol_type"] = "tcp"
    r["service"] = rng.choice(["telnet", "ftp_data", "http"])
    r["flag"] = "SF"
    r["duration"] = str(rng.randint(30, 1000))
    r["src_bytes"] = str(rng.randint(200, 3000))
    r["dst_bytes"] = str(rng.randint(500, 10000))
    r["root_shell"] = "1" if rng.random() < 0.8 else "0"
    r["num_root"] = str(rng.randint(1, 10))
    r["num_file_creations"] = str(rng.randint(1, 5))
    r["num_shells"] = str(rng.randint(0, 2))
    r["hot"] = str(rng.randint(1, 20))
    r["logged_in"] = "1"
    r["su_attempted"] = str(rng.randint(0, 2))
    r["count"] = str(rng.randint(1, 3))
    r["srv_count"] = str(rng.randint(1, 3))
    r["same_srv_rate"] = rr(rng, 0.5, 1.0)
    return r


MAKERS = {
    "DoS": lambda rng, extra: dos_record(rng),
    "Probe": probe_record,
    "R2L": lambda rng, extra: r2l_record(rng),
    "U2R": lambda rng, extra: u2r_record(rng),
}


def smear_toward_normal(rng, r):
    n = normal_record(rng)
    for name in ["flag", "count", "srv_count", "serror_rate", "srv_serror_rate",
                 "same_srv_rate", "diff_srv_rate", "rerror_rate", "dst_host_serror_rate",
                 "dst_host_diff_srv_rate", "dst_host_rerror_rate"]:
        if rng.random() < 0.5:
            r[name] = n[name]
    return r


def make_file(path, rng, mix, attack_names, noise, services_extra):
    rows = []
    for category, count in mix.items():
        for _ in range(count):
            if category == "normal":
                r = normal_record(rng)
                if rng.random() < noise / 2:
                    r["serror_rate"] = rr(rng, 0.5, 1.0)
                    r["count"] = str(rng.randint(80, 300))
                label = "normal"
            else:
                r = MAKERS[category](rng, services_extra)
                if rng.random() < noise:
                    r = smear_toward_normal(rng, r)
                label = rng.choice(attack_names[category])
            difficulty = rng.randint(0, 21)
            rows.append(",".join(r[name] for name in FEATURES) + f",{label},{difficulty}")
    rng.shuffle(rows)
    path.write_text("\n".join(rows) + "\n")
    return len(rows)


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)

    test_attacks = {c: TRAIN_ATTACKS[c] + TEST_ONLY_ATTACKS[c] for c in TRAIN_ATTACKS}

    spec = [
        ("KDDTrain+_fixture.txt",
         {"normal": 1000, "DoS": 600, "Probe": 250, "R2L": 100, "U2R": 50},
         TRAIN_ATTACKS, 0.07, []),
        ("KDDTest+_fixture.txt",
         {"normal": 860, "DoS": 660, "Probe": 215, "R2L": 245, "U2R": 20},
         test_attacks, 0.12, TEST_ONLY_SERVICES),
        ("KDDTest-21_fixture.txt",
         {"normal": 365, "DoS": 735, "Probe": 405, "R2L": 455, "U2R": 40},
         test_attacks, 0.20, TEST_ONLY_SERVICES),
    ]
    for name, mix, attacks, noise, extra in spec:
        n = make_file(OUT_DIR / name, rng, mix, attacks, noise, extra)
        print(f"{name}: {n} records  {mix}")


if __name__ == "__main__":
    main()
