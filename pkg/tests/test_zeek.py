import numpy as np
import pytest

from portwatch.zeek import (FAILED_STATES, INBOUND, OUTBOUND, STATES, ConnLogFormatError,
                            ConnRecord, ConnState, ConnTable, NetworkBoundary, ParseStats,
                            filter_port_outbound, iter_conn_tables, parse_conn_log,
                            read_conn_table, write_conn_log)

HEADER = [
    "#separator \\x09",
    "#fields\tts\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\tduration\torig_bytes\t"
    "resp_bytes\tconn_state\torig_pkts\tresp_pkts",
    "#types\ttime\taddr\tport\taddr\tport\tenum\tinterval\tcount\tcount\tstring\tcount\tcount",
]


def row(*cols):
    return "\t".join(str(c) for c in cols)


def sample_records():
    return [
        ConnRecord(1_600_000_000.5, "10.0.0.1", 5000, "8.8.8.8", 445, "tcp", 1.25, 100, 0, 3, 0,
                   ConnState.S0),
        ConnRecord(1_600_000_001.0, "10.0.0.2", 5001, "1.2.3.4", 443, "udp", None, None, None,
                   None, None, ConnState.OTH, "malicious"),
        ConnRecord(1_600_000_002.0, "9.9.9.9", 6000, "192.168.1.7", 23, "tcp", 0.0, 0, 42, 1, 2,
                   ConnState.SF),
    ]


def test_exactly_thirteen_states_and_failed_set():
    assert len(STATES) == 13
    assert {s.value for s in STATES} == {"S0", "S1", "S2", "S3", "SF", "REJ", "RSTO", "RSTR",
                                         "RSTOS0", "RSTRH", "SH", "SHR", "OTH"}
    assert {s.value for s in FAILED_STATES} == {"S0", "REJ", "RSTO", "RSTR", "RSTOS0", "RSTRH",
                                                "SH", "SHR", "OTH"}


def test_unset_duration_is_absent():
    lines = HEADER + [row(1.5, "10.0.0.1", 1, "8.8.8.8", 80, "tcp", "-", 1, 2, "SF", 1, 1)]
    (rec,) = parse_conn_log(lines)
    assert rec.duration is None
    assert rec.orig_bytes == 1


def test_fields_bound_by_name_not_position():
    shuffled = ["#separator \\x09",
                "#fields\tconn_state\tid.resp_p\tts\tresp_pkts\tid.orig_h\tproto\tid.resp_h\t"
                "orig_bytes\tduration\tid.orig_p\tresp_bytes\torig_pkts\textra",
                "#types\t" + "\t".join(["string"] * 13)]
    lines = shuffled + [row("REJ", 445, 1600000000.25, 1, "10.1.2.3", "tcp", "4.4.4.4", 0, 0.5,
                            4444, 0, 2, "ignored")]
    (rec,) = parse_conn_log(lines)
    reparsed = list(parse_conn_log(list(write_conn_log([rec]))))
    assert reparsed == [rec]
    assert rec.conn_state is ConnState.REJ and rec.dest_p == 445 and rec.orig_p == 4444


def test_unknown_state_skipped_and_counted():
    stats = ParseStats()
    lines = HEADER + [row(1.5, "10.0.0.1", 1, "8.8.8.8", 80, "tcp", 1, 1, 2, "XX", 1, 1),
                      row(2.5, "10.0.0.1", 1, "8.8.8.8", 80, "tcp", 1, 1, 2, "SF", 1, 1)]
    recs = list(parse_conn_log(lines, stats))
    assert len(recs) == 1
    assert stats.skipped == 1 and stats.parsed == 1
    assert "conn_state" in stats.errors[0][1]


@pytest.mark.parametrize("bad", [
    row(-1, "10.0.0.1", 1, "8.8.8.8", 80, "tcp", 1, 1, 2, "SF", 1, 1),
    row(1.0, "10.0.0.1", 70000, "8.8.8.8", 80, "tcp", 1, 1, 2, "SF", 1, 1),
    row(1.0, "10.0.0.1", 1, "8.8.8.8", 80, "tcp", 1, -5, 2, "SF", 1, 1),
    row(1.0, "fe80::1", 1, "8.8.8.8", 80, "tcp", 1, 1, 2, "SF", 1, 1),
    row(1.0, "10.0.0.1", 1, "8.8.8.8", 80, "sctp", 1, 1, 2, "SF", 1, 1),
    row(1.0, "10.0.0.1", 1, "8.8.8.8", 80, "tcp", 1, 1, 2, "SF", 1),
])
def test_invalid_data_lines_are_skipped(bad):
    stats = ParseStats()
    assert list(parse_conn_log(HEADER + [bad], stats)) == []
    assert stats.skipped == 1


def test_ipv6_message_is_clear():
    stats = ParseStats()
    list(parse_conn_log(HEADER + [row(1.0, "fe80::1", 1, "8.8.8.8", 80, "tcp", 1, 1, 2, "SF",
                                      1, 1)], stats))
    assert "IPv6" in stats.errors[0][1]


@pytest.mark.parametrize("lines, needle", [
    ([row(1.0, "10.0.0.1")], "before #fields"),
    (["#fields\tts\tproto"], "lacks"),
    (["#fields\tts\tts"], "duplicate"),
    (HEADER[:1] + ["#types\ttime"], "#types before #fields"),
])
def test_malformed_header_is_fatal_with_line_number(lines, needle):
    with pytest.raises(ConnLogFormatError, match=needle) as info:
        list(parse_conn_log(lines))
    assert info.value.line_no >= 1


def test_round_trip_identity_with_labels():
    recs = sample_records()
    out = list(write_conn_log(recs, include_label=True))
    assert any(line.startswith("#fields") and line.endswith("label") for line in out)
    assert list(parse_conn_log(out)) == recs


def test_round_trip_without_labels_drops_label():
    recs = sample_records()
    back = list(parse_conn_log(list(write_conn_log(recs))))
    assert [r.label for r in back] == ["benign"] * 3


def test_empty_write_is_header_only():
    out = list(write_conn_log([]))
    assert out and all(line.startswith("#") for line in out)
    assert list(parse_conn_log(out)) == []


def test_absent_bytes_written_as_dash():
    line = list(write_conn_log([sample_records()[1]]))[-1]
    cols = line.split("\t")
    assert cols[7] == "-" and cols[8] == "-"


def test_close_and_comment_lines_ignored():
    lines = HEADER + [row(1.5, "10.0.0.1", 1, "8.8.8.8", 80, "tcp", 1, 1, 2, "SF", 1, 1),
                      "#close\t2020-01-01-00-00-00"]
    assert len(list(parse_conn_log(lines))) == 1


def test_read_table_and_chunks_agree():
    recs = sample_records() * 5
    lines = list(write_conn_log(recs, include_label=True))
    table = read_conn_table(lines)
    chunks = list(iter_conn_tables(lines, chunk_size=4))
    assert [len(c) for c in chunks] == [4, 4, 4, 3]
    joined = ConnTable.concat(chunks)
    for name in ConnTable.COLUMNS:
        np.testing.assert_array_equal(getattr(joined, name), getattr(table, name))
    assert list(table) == recs


def test_filter_port_outbound_directions():
    recs = [
        ConnRecord(1.0, "10.0.0.1", 1, "8.8.8.8", 445, conn_state="S0"),
        ConnRecord(2.0, "8.8.4.4", 1, "172.16.0.9", 23, conn_state="S0"),
        ConnRecord(3.0, "10.0.0.1", 1, "10.0.0.2", 445, conn_state="S0"),
        ConnRecord(4.0, "8.8.4.4", 1, "8.8.8.8", 445, conn_state="S0"),
        ConnRecord(5.0, "10.0.0.1", 1, "8.8.8.8", 445, proto="icmp", conn_state="OTH"),
        ConnRecord(6.0, "10.0.0.1", 1, "8.8.8.8", 446, conn_state="S0"),
    ]
    out445 = filter_port_outbound(recs, 445)
    assert out445.ts.tolist() == [1.0] and out445.direction.tolist() == [OUTBOUND]
    out23 = filter_port_outbound(recs, 23)
    assert out23.ts.tolist() == [2.0] and out23.direction.tolist() == [INBOUND]
    assert len(filter_port_outbound(recs, 23, outbound_only=True)) == 0


def test_boundary_membership_any_prefix():
    b = NetworkBoundary(("10.0.0.0/8", "10.1.0.0/16", "203.0.113.0/24"))
    assert "10.1.2.3" in b and "203.0.113.9" in b
    assert "11.0.0.1" not in b
    with pytest.raises(ValueError):
        NetworkBoundary(())
