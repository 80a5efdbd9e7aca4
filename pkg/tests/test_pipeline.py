import json
import os

import numpy as np
import pytest
from PIL import Image

import meshtex.pipeline as pipeline
from meshtex.atlas import TextureAtlas, aggregate, backproject
from meshtex.camera import CameraPose
from meshtex.config import parse_config
from meshtex.diffusion import DenoiserOutput, make_schedule
from meshtex.exceptions import ConfigError
from meshtex.pipeline import RunReport, bake_views, psnr, run
from meshtex.raster import rasterize

FRONT_ANGLES = "0,0;30,10;-30,-10"


def toy_overrides(out, **extra):
    values = {
        "mesh": "builtin:quad",
        "out": str(out),
        "view_angles": FRONT_ANGLES,
        "ddim_count": "6",
        "warp_steps": "5",
        "latent_size": "16",
        "latent_atlas": "32",
        "pixel_atlas": "64",
        "margin": "1",
    }
    values.update({k: str(v) for k, v in extra.items()})
    return values


class TestPsnr:
    def test_exact_match_is_infinite(self):
        a = np.full((4, 4), 0.3)
        assert psnr(a, a) == float("inf")

    def test_known_constant_offset(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_mask_limits_the_comparison(self):
        a = np.zeros((4, 4))
        b = np.zeros((4, 4))
        b[0, 0] = 1.0
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        assert psnr(a, b, mask=mask) == float("inf")
        assert psnr(a, b) < float("inf")

    def test_empty_selection_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 2)), mask=np.zeros((2, 2), bool))


class TestBakeViews:
    def test_valid_mask_is_union_of_view_hits(self, norm_quad):
        frames = [
            rasterize(norm_quad, CameraPose(0.0, 0.0, 2.0), 16),
            rasterize(norm_quad, CameraPose(25.0, 5.0, 2.0), 16),
        ]
        grids = [np.ones((16, 16, 3)) * 0.5, np.ones((16, 16, 3)) * 0.9]
        template = TextureAtlas(32, 32, 3)
        baked = bake_views(frames, grids, template, 2.0)

        merged = template.fresh()
        for frame, grid in zip(frames, grids):
            scatter = backproject(frame, grid, 2.0, 32, 32)
            merged = aggregate(merged, [scatter])
        # aggregate of per-view aggregates has the same support
        assert np.array_equal(baked.valid, merged.valid)
        assert not template.valid.any()  # template untouched


@pytest.fixture(scope="module")
def toy_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy_run")
    report = run(parse_config(overrides=toy_overrides(out)))
    return report, out


class TestToyRun:
    def test_artifacts_exist(self, toy_report):
        report, out = toy_report
        for key in ("texture", "mesh", "mtl", "report"):
            assert os.path.exists(report.outputs[key]), key
        assert len(report.outputs["views"]) == 3
        for vp in report.outputs["views"]:
            assert os.path.exists(vp)
        for v in range(3):
            assert os.path.exists(
                os.path.join(report.outputs["depth_dir"], f"view_{v:02d}.png")
            )
        assert "guidance" not in report.outputs

    def test_texture_is_rgb_at_pixel_atlas_size(self, toy_report):
        report, _ = toy_report
        img = np.asarray(Image.open(report.outputs["texture"]))
        assert img.shape == (64, 64, 3)

    def test_psnr_against_direct_bake(self, toy_report):
        report, _ = toy_report
        assert report.psnr_db is not None
        assert report.psnr_db >= 30.0

    def test_stage_timings_recorded(self, toy_report):
        report, _ = toy_report
        expected = {
            "load", "schedule", "conditioning", "sample",
            "decode", "bake", "verify", "export",
        }
        assert set(report.timings) == expected
        assert all(t >= 0.0 for t in report.timings.values())

    def test_coverage_numbers(self, toy_report):
        report, _ = toy_report
        cov = report.coverage
        assert len(cov["view_foreground_px"]) == 3
        assert all(n > 0 for n in cov["view_foreground_px"])
        assert cov["chart_texels"] > 0
        assert cov["baked_texels"] > 0
        assert 0.0 < cov["baked_chart_fraction"] <= 1.0

    def test_report_json_round_trips(self, toy_report):
        report, _ = toy_report
        with open(report.outputs["report"], "r", encoding="utf-8") as fh:
            data = json.load(fh)
        assert set(data) == {"timings", "coverage", "outputs", "config", "psnr_db"}
        assert data["config"]["mesh"] == "builtin:quad"
        assert data["config"]["ddim_count"] == 6
        assert data["psnr_db"] == report.psnr_db

    def test_writes_stay_under_out_dir(self, toy_report):
        report, out = toy_report
        for key, value in report.outputs.items():
            paths = value if isinstance(value, list) else [value]
            for p in paths:
                assert os.path.commonpath([str(out), os.path.abspath(p)]) == str(out)


class TestReproducibility:
    def test_same_seed_same_texture_bytes(self, tmp_path):
        a = run(parse_config(overrides=toy_overrides(tmp_path / "a", seed=3)))
        b = run(parse_config(overrides=toy_overrides(tmp_path / "b", seed=3)))
        with open(a.outputs["texture"], "rb") as fh:
            bytes_a = fh.read()
        with open(b.outputs["texture"], "rb") as fh:
            bytes_b = fh.read()
        assert bytes_a == bytes_b

    def test_cube_multi_chart_run(self, tmp_path):
        report = run(
            parse_config(
                overrides=toy_overrides(
                    tmp_path, mesh="builtin:cube", view_angles="0,0;90,0;-180,0;-90,0"
                )
            )
        )
        assert report.psnr_db >= 30.0
        assert report.coverage["baked_chart_fraction"] > 0.2


class TestStageAttribution:
    def test_missing_mesh_file_blames_load(self, tmp_path):
        cfg = parse_config(overrides=toy_overrides(tmp_path, mesh="/no/such.obj"))
        with pytest.raises(OSError, match="load stage"):
            run(cfg)

    def test_unknown_builtin_blames_load(self, tmp_path):
        cfg = parse_config(overrides=toy_overrides(tmp_path, mesh="builtin:torus"))
        with pytest.raises(ConfigError, match="load stage"):
            run(cfg)


class FakeBackendClient:
    """Stands in for a live denoiser; steers latents toward a flat 0.5."""

    def __init__(self, sched, decode_size=24):
        self.sched = sched
        self.decode_size = decode_size
        self.transport = "fake-transport"
        self.queries = []
        self.registered = []

    def query(self, latent, timestep, conditioning):
        self.queries.append(conditioning)
        latent = np.asarray(latent, dtype=np.float64)
        ab = self.sched.alpha_bar(timestep)
        eps = (latent - np.sqrt(ab) * 0.5) / np.sqrt(1.0 - ab)
        return DenoiserOutput(eps_cond=eps, eps_uncond=eps)

    def decode_latent(self, grid):
        return np.full((self.decode_size, self.decode_size, 3), 0.5)

    def register_image(self, png_bytes):
        self.registered.append(png_bytes)
        return "img-55"

    def health(self):
        return {"status": "ok"}


@pytest.fixture
def fake_backend(monkeypatch):
    state = {"clients": [], "txt2img_calls": []}

    def fake_remote(endpoint, timeout=60.0, retries=2):
        client = FakeBackendClient(make_schedule(ddim_count=6))
        state["clients"].append((endpoint, client))
        return client

    def fake_fetch(transport, prompt, seed=0, size=512):
        state["txt2img_calls"].append((transport, prompt, seed))
        return "img-1", b"\x89PNG guidance bytes"

    monkeypatch.setattr(pipeline, "remote_denoiser", fake_remote)
    monkeypatch.setattr(pipeline, "fetch_guidance_image", fake_fetch)
    return state


class TestTextMode:
    def test_run_with_stubbed_backend(self, tmp_path, fake_backend):
        cfg = parse_config(
            overrides=toy_overrides(
                tmp_path, mode="text", endpoint="http://stub:1", prompt="a chair"
            )
        )
        report = run(cfg)

        assert len(fake_backend["clients"]) == 1
        endpoint, client = fake_backend["clients"][0]
        assert endpoint == "http://stub:1"

        # one guidance image for the whole run, generated from the base
        # prompt (no direction clause)
        assert len(fake_backend["txt2img_calls"]) == 1
        transport, prompt, seed = fake_backend["txt2img_calls"][0]
        assert transport == "fake-transport"
        assert prompt == "a chair"

        assert report.outputs["guidance"].endswith("guidance.png")
        with open(report.outputs["guidance"], "rb") as fh:
            assert fh.read() == b"\x89PNG guidance bytes"

        # every denoise query carries per-view conditioning
        assert len(client.queries) == 3 * 6
        for cond in client.queries:
            assert cond.prompt.startswith("a chair, from ")
            assert cond.prompt.endswith(" view")
            assert cond.depth_png and cond.depth_png[:4] == b"\x89PNG"
            assert cond.image_guidance_id == "img-1"
            assert cond.image_scale == 0.6
        assert not client.registered

        # decoded views are 24x24 while latents are 16x16, so the bake
        # re-rasterized; no toy targets means no PSNR
        assert report.psnr_db is None
        img = np.asarray(Image.open(report.outputs["views"][0]))
        assert img.shape == (24, 24, 3)
        assert "verify" not in report.timings

    def test_image_mode_skips_txt2img(self, tmp_path, fake_backend):
        ref = tmp_path / "ref.png"
        ref.write_bytes(b"\x89PNG user reference")
        cfg = parse_config(
            overrides=toy_overrides(
                tmp_path / "out",
                mode="image",
                endpoint="http://stub:1",
                prompt="a chair",
                image=str(ref),
            )
        )
        report = run(cfg)

        assert fake_backend["txt2img_calls"] == []
        _, client = fake_backend["clients"][0]
        assert client.registered == [b"\x89PNG user reference"]
        for cond in client.queries:
            assert cond.image_guidance_id == "img-55"
        assert "guidance" not in report.outputs

    def test_missing_reference_file_blames_conditioning(self, tmp_path, fake_backend):
        cfg = parse_config(
            overrides=toy_overrides(
                tmp_path,
                mode="image",
                endpoint="http://stub:1",
                prompt="a chair",
                image=str(tmp_path / "absent.png"),
            )
        )
        with pytest.raises(OSError, match="conditioning stage"):
            run(cfg)


class TestRunReport:
    def test_to_json_shape(self):
        report = RunReport(timings={"load": 0.1}, psnr_db=41.5)
        data = json.loads(report.to_json())
        assert data["timings"] == {"load": 0.1}
        assert data["psnr_db"] == 41.5
        assert data["outputs"] == {}
