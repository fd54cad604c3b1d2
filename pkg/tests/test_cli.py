"""Command-line driver: commands, config layering, exit codes, outputs."""

import numpy as np
import pytest

from chaoslink.cli import (
    EXIT_INVALID,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    main,
    parse_config_file,
)


def run_cli(*argv):
    return main(list(argv))


class TestConfigFile:
    def test_parse_and_comments(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nscale = 3107\nbit_rate_hz = 1e6  # inline\n")
        cfg = parse_config_file(p)
        assert cfg == {"scale": 3107, "bit_rate_hz": 1e6}

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("mystery = 5\n")
        with pytest.raises(Exception):
            parse_config_file(p)

    def test_precedence_flag_over_file_over_default(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("steps = 48\ncomponent = z\n")
        out = tmp_path / "w.txt"
        # file value wins over the default
        assert run_cli("bits", "--config", str(cfg), "--out", str(out)) == EXIT_OK
        words = [ln for ln in out.read_text().splitlines()
                 if not ln.startswith("#")]
        assert len(words) == 48
        # flag wins over the file
        assert run_cli("bits", "--config", str(cfg), "--steps", "7",
                       "--out", str(out)) == EXIT_OK
        words = [ln for ln in out.read_text().splitlines()
                 if not ln.startswith("#")]
        assert len(words) == 7


class TestBitsCommand:
    def test_first_words_match_initial_condition(self, tmp_path):
        for comp, word in (("x", "1000010000001000"),
                           ("y", "0000110000100011"),
                           ("z", "1000000000000000")):
            out = tmp_path / f"bits_{comp}.txt"
            code = run_cli("bits", "--component", comp, "--steps", "4",
                           "--out", str(out))
            assert code == EXIT_OK
            words = [ln for ln in out.read_text().splitlines()
                     if not ln.startswith("#")]
            assert words[0] == word
            assert len(words) == 4
            assert all(len(w) == 16 and set(w) <= {"0", "1"} for w in words)

    def test_embeds_config_echo(self, tmp_path):
        out = tmp_path / "b.txt"
        run_cli("bits", "--steps", "2", "--out", str(out))
        text = out.read_text()
        assert "# scale = 3107" in text
        assert "# version = " in text


class TestSyncCommand:
    def test_zero_steps_header_only(self, tmp_path):
        out = tmp_path / "s.csv"
        assert run_cli("sync", "--steps", "0", "--out", str(out)) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[-1] == "step,e1,e2,e3"

    def test_unsettled_run_exits_invalid(self, tmp_path):
        out = tmp_path / "s.csv"
        code = run_cli("sync", "--steps", "2000", "--out", str(out))
        assert code == EXIT_INVALID

    def test_full_run_settles_and_reruns_identically(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert run_cli("sync", "--steps", "120000", "--out", str(a)) == EXIT_OK
        assert run_cli("sync", "--steps", "120000", "--out", str(b)) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()


class TestTxbitsCommand:
    def test_ideal_channel_ber_zero(self, tmp_path, capsys):
        out = tmp_path / "bits.txt"
        code = run_cli("txbits", "--bits", "300", "--seed", "3",
                       "--out", str(out))
        assert code == EXIT_OK
        assert "errors/bits/ber: 0/300/0" in capsys.readouterr().out
        payload = [ln for ln in out.read_text().splitlines()
                   if not ln.startswith("#")]
        assert len(payload) == 1 and len(payload[0]) == 300

    def test_explicit_message(self, tmp_path, capsys):
        out = tmp_path / "bits.txt"
        code = run_cli("txbits", "--message", "010011", "--out", str(out))
        assert code == EXIT_OK
        assert "errors/bits/ber: 0/6/0" in capsys.readouterr().out

    def test_noisy_conditions_report(self, tmp_path, capsys):
        out = tmp_path / "bits.txt"
        code = run_cli("txbits", "--bits", "200", "--seed", "3",
                       "--ebn0-db", "20", "--noise-dbm", "30",
                       "--out", str(out))
        assert code == EXIT_OK
        text = out.read_text()
        assert "# binding_constraint = noise_dbm" in text

    def test_empty_message_rejected(self, tmp_path):
        assert run_cli("txbits", "--message", "") == EXIT_USAGE

    def test_bad_message_rejected(self):
        assert run_cli("txbits", "--message", "01x") == EXIT_USAGE


class TestTxwaveCommand:
    def test_waveform_report(self, tmp_path, capsys):
        out = tmp_path / "w.csv"
        code = run_cli("txwave", "--out", str(out))
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "correlation" in text
        lines = out.read_text().splitlines()
        data = [ln for ln in lines if not ln.startswith("#")]
        assert data[0] == "step,recovered,original"
        assert len(data) > 1000

    def test_zero_amplitude_recovers_silence(self, tmp_path, capsys):
        out = tmp_path / "w.csv"
        code = run_cli("txwave", "--amplitude", "0", "--out", str(out))
        assert code == EXIT_OK
        rec = []
        for ln in out.read_text().splitlines():
            if ln.startswith("#") or ln.startswith("step"):
                continue
            rec.append(float(ln.split(",")[1]))
        assert float(np.sqrt(np.mean(np.square(rec)))) < 0.005


class TestExitCodes:
    def test_usage_error(self):
        assert run_cli("bits", "--component", "w") == EXIT_USAGE
        assert run_cli("nonsense") == EXIT_USAGE

    def test_io_error(self):
        assert run_cli("bits", "--steps", "2",
                       "--out", "/no/such/dir/x.txt") == EXIT_IO

    def test_missing_config_file(self):
        assert run_cli("bits", "--config", "/no/such.cfg") == EXIT_USAGE
