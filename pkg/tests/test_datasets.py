import json

import numpy as np
import pytest

import toykit
from fusescan.backbone import ToyBackbone
from fusescan.datasets import (
    CACHE_MAGIC,
    MULTIGEN_GENERATORS,
    ManifestEntry,
    SamplingSpec,
    backbone_set_hash,
    balanced_sample,
    chameleon_template,
    genimage_template,
    imaginet_template,
    load_manifest,
    multigen_template,
    read_feature_cache,
    save_manifest,
    train_template,
    write_feature_cache,
)
from fusescan.errors import (
    HashMismatch,
    InsufficientImages,
    InvariantViolation,
    ParseError,
    TruncatedCache,
    VersionMismatch,
)


def entry(path="a/b.png", label="fake", generator="flux", dataset="bench",
          split="test"):
    return ManifestEntry(path=path, label=label, generator_id=generator,
                         dataset_id=dataset, split=split)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestLoadManifest:
    def test_empty_file_is_empty_list(self, tmp_path):
        path = write_lines(tmp_path / "m.jsonl", [])
        assert load_manifest(path) == []

    def test_blank_lines_skipped(self, tmp_path):
        row = json.dumps({"path": "x.png", "label": "fake", "generator_id": "flux",
                          "dataset_id": "d", "split": "test"})
        path = write_lines(tmp_path / "m.jsonl", ["", row, ""])
        entries = load_manifest(path)
        assert len(entries) == 1
        assert entries[0] == entry(path="x.png", dataset="d")

    def test_extra_fields_tolerated(self, tmp_path):
        row = json.dumps({"path": "x.png", "label": "real", "generator_id": "real",
                          "dataset_id": "d", "split": "train", "width": 1024})
        entries = load_manifest(write_lines(tmp_path / "m.jsonl", [row]))
        assert entries[0].label == "real"

    def test_invalid_json_names_the_line(self, tmp_path):
        good = json.dumps({"path": "x.png", "label": "fake", "generator_id": "g",
                           "dataset_id": "d", "split": "test"})
        path = write_lines(tmp_path / "m.jsonl", [good, "{not json"])
        with pytest.raises(ParseError) as err:
            load_manifest(path)
        assert err.value.line_number == 2

    def test_missing_field_is_a_parse_error(self, tmp_path):
        row = json.dumps({"path": "x.png", "label": "fake"})
        with pytest.raises(ParseError) as err:
            load_manifest(write_lines(tmp_path / "m.jsonl", [row]))
        assert "generator_id" in str(err.value)

    def test_real_label_with_fake_generator_rejected(self, tmp_path):
        row = json.dumps({"path": "x.png", "label": "real", "generator_id": "flux",
                          "dataset_id": "d", "split": "test"})
        with pytest.raises(InvariantViolation) as err:
            load_manifest(write_lines(tmp_path / "m.jsonl", [row]))
        assert err.value.line_number == 1

    def test_fake_label_with_real_generator_rejected(self, tmp_path):
        row = json.dumps({"path": "x.png", "label": "fake", "generator_id": "real",
                          "dataset_id": "d", "split": "test"})
        with pytest.raises(InvariantViolation):
            load_manifest(write_lines(tmp_path / "m.jsonl", [row]))

    def test_duplicate_dataset_path_rejected_with_both_lines(self, tmp_path):
        row = json.dumps({"path": "x.png", "label": "fake", "generator_id": "g",
                          "dataset_id": "d", "split": "test"})
        other = json.dumps({"path": "x.png", "label": "fake", "generator_id": "g2",
                            "dataset_id": "d", "split": "test"})
        with pytest.raises(InvariantViolation) as err:
            load_manifest(write_lines(tmp_path / "m.jsonl", [row, other]))
        assert err.value.line_number == 2
        assert "line 1" in str(err.value)

    def test_same_path_in_different_datasets_allowed(self, tmp_path):
        rows = [json.dumps({"path": "x.png", "label": "fake", "generator_id": "g",
                            "dataset_id": d, "split": "test"}) for d in ("a", "b")]
        assert len(load_manifest(write_lines(tmp_path / "m.jsonl", rows))) == 2

    def test_bad_split_rejected(self, tmp_path):
        row = json.dumps({"path": "x.png", "label": "fake", "generator_id": "g",
                          "dataset_id": "d", "split": "validation"})
        with pytest.raises(InvariantViolation):
            load_manifest(write_lines(tmp_path / "m.jsonl", [row]))

    def test_save_load_round_trip_with_extras(self, tmp_path):
        entries = [entry(path="a.png"), entry(path="b.png", label="real",
                                              generator="real")]
        path = tmp_path / "m.jsonl"
        save_manifest(entries, path, extra={1: {"prompt_id": 7}})
        assert load_manifest(path) == entries
        last = json.loads(path.read_text().splitlines()[1])
        assert last["prompt_id"] == 7

    def test_toy_split_builder_output_parses(self, tmp_path):
        manifest = toykit.build_toy_split(tmp_path, "toy", "gen-a", "train", 3)
        entries = load_manifest(manifest)
        assert len(entries) == 6
        assert sum(e.label == "fake" for e in entries) == 3


class TestBalancedSample:
    def pool(self, per_gen=100, reals=400):
        entries = []
        for g in ("g1", "g2", "g3"):
            entries.extend(entry(path=f"{g}/{i}.png", generator=g)
                           for i in range(per_gen))
        entries.extend(entry(path=f"r/{i}.png", label="real", generator="real")
                       for i in range(reals))
        return entries

    def test_equal_counts_and_matched_reals(self):
        picked = balanced_sample(self.pool(), SamplingSpec(per_generator=50))
        fakes = [e for e in picked if e.label == "fake"]
        reals = [e for e in picked if e.label == "real"]
        assert len(fakes) == 150
        assert len(reals) == 150
        per_gen = {g: sum(e.generator_id == g for e in fakes)
                   for g in ("g1", "g2", "g3")}
        assert set(per_gen.values()) == {50}

    def test_same_seed_same_selection(self):
        spec = SamplingSpec(per_generator=20, seed=9)
        assert balanced_sample(self.pool(), spec) == balanced_sample(self.pool(), spec)

    def test_different_seed_different_selection(self):
        a = balanced_sample(self.pool(), SamplingSpec(per_generator=20, seed=0))
        b = balanced_sample(self.pool(), SamplingSpec(per_generator=20, seed=1))
        assert a != b

    def test_without_replacement(self):
        picked = balanced_sample(self.pool(), SamplingSpec(per_generator=100))
        paths = [e.path for e in picked]
        assert len(paths) == len(set(paths))

    def test_preserves_manifest_order(self):
        pool = self.pool()
        position = {id(e): i for i, e in enumerate(pool)}
        picked = balanced_sample(pool, SamplingSpec(per_generator=10))
        ranks = [position[id(e)] for e in picked]
        assert ranks == sorted(ranks)

    def test_all_deficits_reported_at_once(self):
        entries = (list(self.pool(per_gen=10, reals=5))
                   + [entry(path="g4/0.png", generator="g4")])
        with pytest.raises(InsufficientImages) as err:
            balanced_sample(entries, SamplingSpec(per_generator=50))
        short = {g for g, have, need in err.value.deficits}
        assert short == {"g1", "g2", "g3", "g4", "real"}
        g4 = next(d for d in err.value.deficits if d[0] == "g4")
        assert g4 == ("g4", 1, 50)

    def test_unbalanced_mode_keeps_every_real(self):
        picked = balanced_sample(
            self.pool(reals=7),
            SamplingSpec(per_generator=10, balance_real_fake=False))
        assert sum(e.label == "real" for e in picked) == 7

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SamplingSpec(per_generator=0)


class TestFeatureCache:
    def corpus(self, tmp_path, n_per_class=4):
        manifest = toykit.build_toy_split(tmp_path, "toy", "gen-a", "test",
                                          n_per_class)
        return load_manifest(manifest)

    def runners(self, dims=(8, 12)):
        return [ToyBackbone(dim=d, seed=i) for i, d in enumerate(dims)]

    def test_round_trip_preserves_everything(self, tmp_path):
        entries = self.corpus(tmp_path)
        runners = self.runners()
        path = tmp_path / "f.fdcache"
        report = write_feature_cache(path, entries, runners, root=tmp_path)
        assert report.written == len(entries)
        assert report.dim == 20
        assert report.skipped == ()

        cache = read_feature_cache(path, expected_hash=report.backbone_hash)
        assert cache.features.shape == (len(entries), 20)
        assert cache.features.dtype == np.float32
        np.testing.assert_array_equal(cache.indices, np.arange(len(entries)))
        expected_labels = [1 if e.label == "fake" else 0 for e in entries]
        np.testing.assert_array_equal(cache.labels, expected_labels)

        # re-reading gives bit-identical payloads
        again = read_feature_cache(path)
        np.testing.assert_array_equal(cache.features, again.features)

    def test_rows_match_direct_extraction(self, tmp_path):
        from fusescan.fusion_head import fuse
        from fusescan.imaging import load_image, preprocess

        entries = self.corpus(tmp_path, n_per_class=2)
        runners = self.runners()
        path = tmp_path / "f.fdcache"
        write_feature_cache(path, entries, runners, root=tmp_path)
        cache = read_feature_cache(path)
        for row, e in zip(cache.features, entries):
            raw = load_image(tmp_path / e.path)
            parts = [r.embed(preprocess(raw, r.spec.preprocess)) for r in runners]
            np.testing.assert_array_equal(row, fuse(parts[0], parts[1]))

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        entries = self.corpus(tmp_path, n_per_class=6)
        runners = self.runners()
        blobs = {}
        for workers in (1, 2, 5):
            path = tmp_path / f"w{workers}.fdcache"
            write_feature_cache(path, entries, runners, root=tmp_path,
                                max_workers=workers)
            blobs[workers] = path.read_bytes()
        assert blobs[1] == blobs[2] == blobs[5]

    def test_thread_env_var_controls_default(self, tmp_path, monkeypatch):
        entries = self.corpus(tmp_path, n_per_class=3)
        runners = self.runners()
        single = tmp_path / "single.fdcache"
        write_feature_cache(single, entries, runners, root=tmp_path)
        monkeypatch.setenv("FD_THREADS", "4")
        pooled = tmp_path / "pooled.fdcache"
        write_feature_cache(pooled, entries, runners, root=tmp_path)
        assert single.read_bytes() == pooled.read_bytes()

    def test_augmented_rows_are_deterministic_across_thread_counts(self, tmp_path):
        entries = self.corpus(tmp_path, n_per_class=5)
        runners = self.runners()
        blobs = []
        for workers in (1, 4):
            path = tmp_path / f"aug{workers}.fdcache"
            write_feature_cache(path, entries, runners, root=tmp_path,
                                augment_probability=1.0, augment_seed=3,
                                max_workers=workers)
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]

        plain = tmp_path / "plain.fdcache"
        write_feature_cache(plain, entries, runners, root=tmp_path)
        assert plain.read_bytes() != blobs[0]

    def test_unreadable_rows_skipped_with_report(self, tmp_path):
        entries = self.corpus(tmp_path, n_per_class=3)
        garbage = entry(path="toy/garbage.png", dataset="toy", generator="gen-a")
        (tmp_path / "toy" / "garbage.png").write_bytes(b"not a png at all")
        missing = entry(path="toy/missing.png", dataset="toy", generator="gen-a")
        entries = entries + [garbage, missing]

        path = tmp_path / "f.fdcache"
        report = write_feature_cache(path, entries, self.runners(), root=tmp_path)
        assert report.written == 6
        assert len(report.skipped) == 2
        assert {s.path for s in report.skipped} == {"toy/garbage.png",
                                                    "toy/missing.png"}
        cache = read_feature_cache(path)
        assert len(cache.features) == 6
        assert 6 not in cache.indices and 7 not in cache.indices

    def test_backbone_hash_mismatch_rejected(self, tmp_path):
        entries = self.corpus(tmp_path, n_per_class=2)
        path = tmp_path / "f.fdcache"
        write_feature_cache(path, entries, [ToyBackbone(dim=8)], root=tmp_path)
        other = backbone_set_hash([ToyBackbone(dim=16).spec])
        with pytest.raises(HashMismatch):
            read_feature_cache(path, expected_hash=other)

    def test_hash_depends_on_backbone_order(self):
        a, b = ToyBackbone(dim=8).spec, ToyBackbone(dim=12, seed=1).spec
        assert backbone_set_hash([a, b]) != backbone_set_hash([b, a])

    def test_truncated_payload_rejected(self, tmp_path):
        entries = self.corpus(tmp_path, n_per_class=2)
        path = tmp_path / "f.fdcache"
        write_feature_cache(path, entries, self.runners(), root=tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(TruncatedCache):
            read_feature_cache(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        entries = self.corpus(tmp_path, n_per_class=2)
        path = tmp_path / "f.fdcache"
        write_feature_cache(path, entries, self.runners(), root=tmp_path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(TruncatedCache):
            read_feature_cache(path)

    def test_short_header_rejected(self, tmp_path):
        path = tmp_path / "f.fdcache"
        path.write_bytes(b"FDCACHE")
        with pytest.raises(TruncatedCache):
            read_feature_cache(path)

    def test_bad_magic_rejected(self, tmp_path):
        entries = self.corpus(tmp_path, n_per_class=2)
        path = tmp_path / "f.fdcache"
        write_feature_cache(path, entries, self.runners(), root=tmp_path)
        blob = bytearray(path.read_bytes())
        blob[:7] = b"NOCACHE"
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatch):
            read_feature_cache(path)

    def test_magic_constant(self, tmp_path):
        entries = self.corpus(tmp_path, n_per_class=2)
        path = tmp_path / "f.fdcache"
        write_feature_cache(path, entries, self.runners(), root=tmp_path)
        assert path.read_bytes().startswith(CACHE_MAGIC)
        assert CACHE_MAGIC == b"FDCACHE"

    def test_no_runners_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_feature_cache(tmp_path / "f.fdcache", [], [])


class TestTemplates:
    def test_twelve_generator_benchmark_composition(self):
        entries = multigen_template()
        fakes = [e for e in entries if e.label == "fake"]
        reals = [e for e in entries if e.label == "real"]
        assert len(fakes) == 11550
        assert len(reals) == 1000
        by_gen = {g: sum(e.generator_id == g for e in fakes)
                  for g, _ in MULTIGEN_GENERATORS}
        assert by_gen["gpt-4o"] == 550
        assert set(by_gen.values()) == {550, 1000}
        assert len(by_gen) == 12

    def test_genimage_composition(self):
        entries = genimage_template()
        assert sum(e.label == "fake" for e in entries) == 4000
        assert sum(e.label == "real" for e in entries) == 4000
        assert len({e.generator_id for e in entries if e.label == "fake"}) == 8

    def test_imaginet_composition(self):
        entries = imaginet_template()
        assert sum(e.label == "fake" for e in entries) == 5000
        assert sum(e.label == "real" for e in entries) == 5000

    def test_chameleon_composition(self):
        entries = chameleon_template()
        assert sum(e.label == "fake" for e in entries) == 1478
        assert sum(e.label == "real" for e in entries) == 1117
        assert {e.generator_id for e in entries if e.label == "fake"} == {"unknown"}

    def test_train_template_uses_the_two_early_generators(self):
        entries = train_template(fake_per_generator=3, real_count=6)
        gens = {e.generator_id for e in entries if e.label == "fake"}
        assert gens == {"sd1.4", "sd2.1"}
        assert sum(e.label == "real" for e in entries) == 6
        assert all(e.split == "train" for e in entries)

    @pytest.mark.parametrize("template", [multigen_template, genimage_template,
                                          imaginet_template, chameleon_template])
    def test_templates_survive_a_save_load_cycle(self, template, tmp_path):
        entries = template()
        path = tmp_path / "t.jsonl"
        save_manifest(entries, path)
        assert load_manifest(path) == entries
