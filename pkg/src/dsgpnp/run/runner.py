"""Experiment runner for plug-and-play reconstructions.

The runner assembles the generic plug-and-play components with the problem-specific forward models
and denoisers, according to a single flat experiment configuration. It provides four experiments:

- `interp`: sparse interpolation of a (simulated or measured) image, compared against Shepard
  interpolation and across denoisers
- `tomo`: bright-field tomography of a (simulated or measured) tilt series, compared against FBP
- `denoise`: a single application of a denoiser to an image
- `verify`: convergence condition checks of a denoiser on a probe corpus

Every experiment writes its artifacts into the output directory, together with the resolved
configuration it was run with. Outputs depend only on the configuration and the seed.

Classes:
    ExperimentConfig: Flat configuration of an experiment
    ExperimentResult: Reconstruction and summary of an experiment
    ExperimentRunner: Runs experiments and writes their artifacts
"""

import math
import os
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from dsgpnp import utilities as utils
from dsgpnp.components import denoisers, interpolation, nlm, phantoms, tomography
from dsgpnp.core import conditions, logging, operators, pnp
from dsgpnp.run import postprocessor

KINDS = ("interp", "tomo", "denoise", "verify")
BASELINES = ("auto", "shepard", "fbp", "none")
DEFAULT_ITERATIONS = {"interp": 150, "tomo": 200}
DEFAULT_FREEZE_ITERATION = {"interp": 12, "tomo": 20}
DEFAULT_COMPARISON = {"interp": "nlm,dsg-nlm"}
INTERPOLATION_BETA = {"nlm": 0.9, "dsg-nlm": 0.79, "external": 0.55}
TOMOGRAPHY_BETA = 3.68


# ==================================================================================================
@dataclass
class ExperimentConfig:
    """Flat configuration of an experiment.

    Values left at `None` or `auto` are filled in per experiment kind by `resolved`. All fields
    can be set in a key=value configuration file under their attribute name.

    Attributes:
        kind (str): Experiment, one of `interp`, `tomo`, `denoise`, `verify`
        output_directory (Path): Directory for all artifacts
        input_image (Path | None): Raster with the ground truth (interp, tomo) or the image to
            denoise or probe (denoise, verify)
        mask_file (Path | None): Measured sampling mask, replaces the simulated mask (interp)
        sinogram_file (Path | None): Measured tilt series, replaces the simulation (tomo)
        weights_file (Path | None): Weights of the measured tilt series (tomo)
        seed (int): Experiment seed
        threads (int | None): Threads for weight construction, `None` uses all cores
        iterations (int | None): Plug-and-play iterations, 150 (interp) or 200 (tomo)
        beta (float | None): Regularization strength of the selected denoiser
        sigma_lambda (float | None): Augmented Lagrangian parameter, estimated from the baseline
            reconstruction if not given
        sigma_n (float | None): Noise level for `denoise` and `verify`, sqrt(beta) sigma_lambda if
            not given
        denoiser (str): Selected denoiser, `nlm`, `dsg-nlm`, `identity` or `external:<path>`
        compare (str): Comma-separated further denoisers to compare against, `auto` compares
            `nlm` and `dsg-nlm` for interpolation
        freeze_at (str): Weight freeze iteration, an integer, `never` or `auto` (12 for interp,
            20 for tomo)
        early_stopping (bool): Stop once both residuals are within tolerance
        primal_tolerance (float): Tolerance on the normalized primal residual
        dual_tolerance (float): Tolerance on the normalized dual residual
        baseline (str): Initialization, `shepard`, `fbp`, `none` or `auto`
        patch_radius (int): NLM patch radius
        search_radius (int): NLM search window radius
        image_size (int): Side length of simulated phantoms and of the tomography grid
        phantom_count (int): Number of super-ellipses of a simulated interpolation phantom
        fraction (float): Sampling fraction of a simulated mask
        sigma_w (float): Measurement noise of the interpolation problem
        scale_intensities (bool): Map interpolation data onto [0, 255]
        num_tilts (int): Number of simulated tilts
        tilt_range (float): Simulated tilts span [-tilt_range, tilt_range] degrees
        dose (float): Blank scan counts of the simulated tilt series
        outlier_fraction (float): Fraction of simulated Bragg-like outliers
        noise (bool): Whether simulated counts are noisy
        pixel_pitch (float): Pixel pitch of the tomography grid in nm
        disk_count (int): Number of disks of a simulated tomography phantom
        disk_radius_min (float): Minimum disk radius in nm
        disk_radius_max (float): Maximum disk radius in nm
        huber_threshold (float): Generalized Huber threshold T
        huber_delta (float): Generalized Huber slope reduction δ
        prox_passes (int): Alternating passes per tomography proximal map
        icd_sweeps (int): Coordinate descent sweeps per x-update
        probe_count (int): Number of random probes for `verify`
        probe_size (int): Side length of random probes for `verify`
        verify_tolerance (float): Tolerance of the condition checks
        dump_weights (bool): Write the weight matrix as `row col weight` triplets
        print_progress (bool): Print the run table to the console
        print_interval (int): Iterations between run table rows
        debug_log (bool): Write operator events into `debug.log`
    """

    kind: str = "interp"
    output_directory: Path = Path("results")
    input_image: Path | None = None
    mask_file: Path | None = None
    sinogram_file: Path | None = None
    weights_file: Path | None = None
    seed: int = 0
    threads: int | None = None
    iterations: int | None = None
    beta: float | None = None
    sigma_lambda: float | None = None
    sigma_n: float | None = None
    denoiser: str = "dsg-nlm"
    compare: str = "auto"
    freeze_at: str = "auto"
    early_stopping: bool = False
    primal_tolerance: float = 0.0
    dual_tolerance: float = 0.0
    baseline: str = "auto"
    patch_radius: int = 2
    search_radius: int = 10
    image_size: int = 256
    phantom_count: int = 12
    fraction: float = 0.1
    sigma_w: float = 0.0
    scale_intensities: bool = True
    num_tilts: int = 47
    tilt_range: float = 70.0
    dose: float = 1e4
    outlier_fraction: float = 0.05
    noise: bool = True
    pixel_pitch: float = 1.0
    disk_count: int = 6
    disk_radius_min: float = 12.0
    disk_radius_max: float = 36.0
    huber_threshold: float = 3.0
    huber_delta: float = 0.5
    prox_passes: int = 3
    icd_sweeps: int = 5
    probe_count: int = 8
    probe_size: int = 16
    verify_tolerance: float = 1e-10
    dump_weights: bool = False
    print_progress: bool = True
    print_interval: int = 10
    debug_log: bool = False

    def __post_init__(self) -> None:
        """Validate settings that are not checked by the components.

        Raises:
            ValueError: If the experiment kind, baseline or freeze setting is unknown
        """
        self.output_directory = Path(self.output_directory)
        if self.kind not in KINDS:
            raise ValueError(f"Unknown experiment kind {self.kind}, expected one of {KINDS}")
        if self.baseline not in BASELINES:
            raise ValueError(f"Unknown baseline {self.baseline}, expected one of {BASELINES}")
        if self.freeze_at not in ("auto", "never") and not str(self.freeze_at).isdigit():
            raise ValueError(f"freeze_at must be an integer, never or auto, got {self.freeze_at}")
        self.freeze_at = str(self.freeze_at)
        if self.threads is not None and self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads}")

    # ----------------------------------------------------------------------------------------------
    @classmethod
    def from_entries(cls, entries: typing.Mapping[str, str]) -> "ExperimentConfig":
        """Construct a configuration from key=value strings.

        Keys are attribute names, hyphens are accepted in place of underscores and `out` is an alias
        of `output_directory`. The values `none` and `auto` leave optional attributes unset.

        Raises:
            ValueError: If a key is unknown or a value cannot be converted
        """
        annotations = {config_field.name: config_field.type for config_field in fields(cls)}
        values = {}
        for raw_key, text in entries.items():
            key = raw_key.strip().replace("-", "_")
            key = "output_directory" if key == "out" else key
            if key not in annotations:
                raise ValueError(f"Unknown configuration key: {raw_key}")
            try:
                values[key] = _convert(annotations[key], str(text).strip())
            except ValueError as error:
                raise ValueError(f"Invalid value for {raw_key}: {text}") from error
        return cls(**values)

    @classmethod
    def from_file(
        cls, path: Path | None, overrides: typing.Mapping[str, str] | None = None
    ) -> "ExperimentConfig":
        """Read a key=value configuration file and apply overrides, later entries win."""
        entries = utils.read_key_value(path) if path is not None else {}
        entries.update(overrides or {})
        return cls.from_entries(entries)

    def to_entries(self) -> dict[str, str]:
        """String representation of all attributes, the inverse of `from_entries`."""
        return {
            config_field.name: _format(getattr(self, config_field.name))
            for config_field in fields(self)
        }

    # ----------------------------------------------------------------------------------------------
    def resolved(self) -> "ExperimentConfig":
        """Copy with all kind-dependent defaults filled in."""
        compare = self.compare
        if compare == "auto":
            compare = DEFAULT_COMPARISON.get(self.kind, "")
        freeze_at = self.freeze_at
        if freeze_at == "auto":
            freeze_at = str(DEFAULT_FREEZE_ITERATION.get(self.kind, "never"))
        baseline = self.baseline
        if baseline == "auto":
            baseline = {"interp": "shepard", "tomo": "fbp"}.get(self.kind, "none")
        iterations = self.iterations
        if iterations is None:
            iterations = DEFAULT_ITERATIONS.get(self.kind, 0)
        resolved = replace(
            self,
            compare=compare,
            freeze_at=freeze_at,
            baseline=baseline,
            iterations=iterations,
            threads=self.threads or os.cpu_count() or 1,
        )
        if resolved.beta is None:
            resolved.beta = resolved.default_beta(resolved.denoiser)
        return resolved

    @property
    def freeze_iteration(self) -> int | None:
        """Freeze iteration as integer, `None` for never."""
        if self.freeze_at == "auto":
            return DEFAULT_FREEZE_ITERATION.get(self.kind)
        return None if self.freeze_at == "never" else int(self.freeze_at)

    def methods(self) -> list[str]:
        """Denoisers to run, comparison denoisers first, the selected denoiser last."""
        compared = [method.strip() for method in self.compare.split(",") if method.strip()]
        excluded = ("auto", "none", self.denoiser)
        compared = [method for method in compared if method not in excluded]
        return [*dict.fromkeys(compared), self.denoiser]

    def default_beta(self, method: str) -> float:
        """Regularization strength for a denoiser, from the experiment's parameter table."""
        if self.kind == "tomo":
            return TOMOGRAPHY_BETA
        if method.startswith("external:"):
            return INTERPOLATION_BETA["external"]
        return INTERPOLATION_BETA.get(method, 1.0)

    def beta_for(self, method: str) -> float:
        """Regularization strength of a method, the configured value for the selected one."""
        if method == self.denoiser and self.beta is not None:
            return self.beta
        return self.default_beta(method)


# ==================================================================================================
@dataclass
class ExperimentResult:
    """Reconstruction and summary of an experiment.

    Attributes:
        output_directory (Path): Directory holding all artifacts
        reconstruction (np.ndarray): Result of the selected method
        summary (dict[str, str]): Entries of `summary.txt`
        residual_logs (dict[str, pnp.ResidualLog]): Residual logs per plug-and-play method
    """

    output_directory: Path
    reconstruction: np.ndarray
    summary: dict[str, str]
    residual_logs: dict[str, pnp.ResidualLog] = field(default_factory=dict)


# ==================================================================================================
class ExperimentRunner:
    """Runs experiments and writes their artifacts.

    Methods:
        run: Run the configured experiment
        cmd_interp: Sparse interpolation experiment
        cmd_tomo: Tomography experiment
        cmd_denoise: Single denoiser application
        cmd_verify: Convergence condition checks
    """

    def __init__(self, config: ExperimentConfig) -> None:
        """Constructor of the runner.

        Resolves the configuration and sets up the output directory and the logger.

        Args:
            config (ExperimentConfig): Experiment configuration
        """
        self._config = config.resolved()
        self._output_directory = self._config.output_directory
        self._output_directory.mkdir(parents=True, exist_ok=True)
        logger_settings = logging.LoggerSettings(
            do_printing=self._config.print_progress,
            logfile_path=self._output_directory / "run.log",
            debugfile_path=self._output_directory / "debug.log" if self._config.debug_log else None,
            write_mode="w",
            print_interval=self._config.print_interval,
        )
        self._logger = logging.PnPLogger(logger_settings, name=self._config.kind)
        (
            self._phantom_seed,
            self._measurement_seed,
            self._noise_seed,
            self._probe_seed,
        ) = utils.spawn_seeds(self._config.seed, 4)

    @property
    def config(self) -> ExperimentConfig:
        """Resolved configuration."""
        return self._config

    # ----------------------------------------------------------------------------------------------
    def run(self) -> ExperimentResult:
        """Run the configured experiment.

        The resolved configuration is written to `config.resolved` before the experiment starts.
        Errors are logged and re-raised unchanged, with a note naming the failed experiment kind.

        Returns:
            ExperimentResult: Reconstruction and summary
        """
        utils.write_key_value(self._output_directory / "config.resolved", self._config.to_entries())
        command = {
            "interp": self.cmd_interp,
            "tomo": self.cmd_tomo,
            "denoise": self.cmd_denoise,
            "verify": self.cmd_verify,
        }[self._config.kind]
        try:
            return command()
        except (ValueError, FloatingPointError, RuntimeError, OSError) as error:
            self._logger.exception(f"{self._config.kind} experiment failed")
            error.add_note(f"{self._config.kind} experiment failed")
            raise
        finally:
            self._logger.close()

    # ----------------------------------------------------------------------------------------------
    def cmd_interp(self) -> ExperimentResult:
        """Sparse interpolation experiment.

        Generates or loads the ground truth and the mask, computes the Shepard baseline, and runs
        plug-and-play with every configured denoiser. Writes `recon.raster` and `residuals.csv` of
        the selected denoiser, `residuals_<method>.csv` of the others, the baseline and
        `summary.txt` with the normalized RMSE of every method.

        Returns:
            ExperimentResult: Reconstruction of the selected denoiser and summary
        """
        config = self._config
        summary = postprocessor.Postprocessor(
            postprocessor.PostprocessorSettings(self._output_directory)
        )
        truth = self._interpolation_truth()
        if config.mask_file is not None:
            mask = interpolation.SamplingMask.read(config.mask_file, sigma_w=config.sigma_w)
        else:
            if truth is None:
                raise ValueError("Simulated masks require a ground truth image")
            mask = interpolation.sample_image(
                truth,
                interpolation.random_mask(truth.shape, config.fraction, self._measurement_seed),
                sigma_w=config.sigma_w,
                seed=self._noise_seed,
            )
            mask.write(self._output_directory / "mask.txt")
        if truth is not None and truth.shape != mask.shape:
            raise ValueError(f"Ground truth shape {truth.shape} does not match mask {mask.shape}")

        values = mask.measured_values()
        scaling = (
            interpolation.IntensityScaling.from_values(values)
            if config.scale_intensities
            else interpolation.IntensityScaling(offset=0.0, scale=1.0)
        )
        scaled_mask = replace(
            mask, values=scaling.forward(values), sigma_w=config.sigma_w * scaling.scale
        )
        summary.add_entries(
            {
                "kind": config.kind,
                "shape": "x".join(str(dim) for dim in mask.shape),
                "samples": mask.count,
                "fraction": mask.count / math.prod(mask.shape),
                "scaling.offset": scaling.offset,
                "scaling.scale": scaling.scale,
            }
        )

        if config.baseline == "shepard":
            x_init = interpolation.shepard_interpolate(scaled_mask)
            baseline = scaling.inverse(x_init)
            utils.write_raster(self._output_directory / "shepard.raster", baseline)
            summary.add_method(
                postprocessor.MethodResult(method="shepard", rmse=_score(baseline, truth))
            )
        else:
            x_init = np.full(mask.shape, float(np.mean(scaled_mask.measured_values())))

        inversion = interpolation.InterpolationInversion(scaled_mask)
        sigma_lambda = self._sigma_lambda(x_init, summary)
        reconstruction, residual_logs = None, {}
        for method in config.methods():
            state, residual_log, denoiser = self._run_pnp(method, x_init, inversion, sigma_lambda)
            recon = scaling.inverse(state.x_hat)
            residual_logs[method] = residual_log
            self._write_run_artifacts(method, recon, residual_log)
            summary.add_method(
                postprocessor.MethodResult.from_residual_log(
                    method,
                    residual_log,
                    beta=config.beta_for(method),
                    rmse=_score(recon, truth),
                    **_denoiser_extras(denoiser),
                )
            )
            reconstruction = recon

        summary.write()
        return ExperimentResult(
            self._output_directory, reconstruction, summary.entries(), residual_logs
        )

    # ----------------------------------------------------------------------------------------------
    def cmd_tomo(self) -> ExperimentResult:
        """Tomography experiment.

        Simulates a tilt series from a disk phantom, or loads a measured one, computes the FBP
        baseline and runs plug-and-play with the tomography inversion operator and every
        configured denoiser. The summary reports the RMSE against the phantom, the mean absolute
        data residual on clean and outlier measurements and the number of cost increases within
        the alternating minimization.

        Returns:
            ExperimentResult: Reconstruction of the selected denoiser and summary
        """
        config = self._config
        summary = postprocessor.Postprocessor(
            postprocessor.PostprocessorSettings(self._output_directory)
        )
        huber = tomography.HuberParams(threshold=config.huber_threshold, delta=config.huber_delta)
        truth = None
        if config.sinogram_file is not None:
            tilt_series = tomography.TiltSeries.read(config.sinogram_file, config.weights_file)
            geometry = tomography.ProjectionGeometry(
                nx=config.image_size,
                nz=config.image_size,
                pixel_pitch=config.pixel_pitch,
                num_bins=tilt_series.num_bins,
            )
            if config.input_image is not None:
                truth = utils.read_raster(config.input_image).astype(np.float64)
        else:
            geometry = tomography.ProjectionGeometry(
                nx=config.image_size, nz=config.image_size, pixel_pitch=config.pixel_pitch
            )
            truth = self._tomography_truth(geometry)
            angles = np.linspace(-config.tilt_range, config.tilt_range, config.num_tilts)
            tilt_series = phantoms.simulate_tilt_series(
                truth,
                geometry,
                angles,
                dose=config.dose,
                outlier_fraction=config.outlier_fraction,
                seed=self._measurement_seed,
                noise=config.noise,
            )
            tilt_series.write(
                self._output_directory / "sinogram.txt", self._output_directory / "weights.txt"
            )
        summary.add_entries(
            {
                "kind": config.kind,
                "shape": f"{geometry.nz}x{geometry.nx}",
                "tilts": tilt_series.num_tilts,
                "bins": tilt_series.num_bins,
                "clamped_counts": tilt_series.clamped_counts,
                "outliers": (
                    int(np.count_nonzero(tilt_series.outlier_flags))
                    if tilt_series.outlier_flags is not None
                    else None
                ),
            }
        )

        if config.baseline == "fbp":
            x_init = tomography.fbp_reconstruct(tilt_series, geometry)
            utils.write_raster(self._output_directory / "fbp.raster", x_init)
            summary.add_method(
                postprocessor.MethodResult(
                    method="fbp", rmse=_score(x_init, truth), extras=_absolute_error(x_init, truth)
                )
            )
        else:
            x_init = np.zeros(geometry.shape)

        sigma_lambda = self._sigma_lambda(x_init, summary)
        reconstruction, residual_logs = None, {}
        for method in config.methods():
            inversion = tomography.TomographyInversion(
                tilt_series,
                geometry,
                huber,
                passes=config.prox_passes,
                sweeps=config.icd_sweeps,
                logger=self._logger,
            )
            state, residual_log, denoiser = self._run_pnp(method, x_init, inversion, sigma_lambda)
            residual_logs[method] = residual_log
            self._write_run_artifacts(method, state.x_hat, residual_log)
            extras = {
                **_absolute_error(state.x_hat, truth),
                **_outlier_scores(state.x_hat, inversion, tilt_series, geometry),
                "descent_violations": inversion.descent_violations,
                "sigma": inversion.nuisance.sigma if inversion.nuisance is not None else None,
                **_denoiser_extras(denoiser),
            }
            summary.add_method(
                postprocessor.MethodResult.from_residual_log(
                    method,
                    residual_log,
                    beta=config.beta_for(method),
                    rmse=_score(state.x_hat, truth),
                    **extras,
                )
            )
            reconstruction = state.x_hat

        summary.write()
        return ExperimentResult(
            self._output_directory, reconstruction, summary.entries(), residual_logs
        )

    # ----------------------------------------------------------------------------------------------
    def cmd_denoise(self) -> ExperimentResult:
        """Apply the selected denoiser once to the input image.

        Raises:
            ValueError: If no input image is configured

        Returns:
            ExperimentResult: Denoised image and summary
        """
        config = self._config
        if config.input_image is None:
            raise ValueError("The denoise experiment requires an input image")
        image = utils.read_raster(config.input_image).astype(np.float64)
        sigma_n = self._sigma_n(image)
        denoiser = self._build_denoiser(config.denoiser, freeze_at=None)
        denoised = denoiser(image, sigma_n)
        utils.write_raster(self._output_directory / "recon.raster", denoised)
        if config.dump_weights:
            self._dump_weights(denoiser, image, sigma_n)

        summary = postprocessor.Postprocessor(
            postprocessor.PostprocessorSettings(self._output_directory)
        )
        summary.add_entries(
            {
                "kind": config.kind,
                "denoiser": config.denoiser,
                "sigma_n": sigma_n,
                "change_norm": float(np.linalg.norm(denoised - image)),
                **_denoiser_extras(denoiser),
            }
        )
        summary.write()
        return ExperimentResult(self._output_directory, denoised, summary.entries())

    # ----------------------------------------------------------------------------------------------
    def cmd_verify(self) -> ExperimentResult:
        """Check the convergence conditions of the selected denoiser on a probe corpus.

        The corpus is the input image if configured, otherwise `probe_count` random probes. The
        summary lists the measured deviations and pass/fail of every condition per probe, and an
        overall verdict.

        Returns:
            ExperimentResult: Last probe and summary
        """
        config = self._config
        if config.input_image is not None:
            probes = [utils.read_raster(config.input_image).astype(np.float64)]
        else:
            rng = np.random.default_rng(self._probe_seed)
            size = (config.probe_count, config.probe_size, config.probe_size)
            probes = list(rng.uniform(0.0, 255.0, size=size))
        denoiser = self._build_denoiser(config.denoiser, freeze_at=None)

        summary = postprocessor.Postprocessor(
            postprocessor.PostprocessorSettings(self._output_directory)
        )
        summary.add_entries({"kind": config.kind, "denoiser": config.denoiser})
        all_passed = True
        for index, probe in enumerate(probes):
            sigma_n = self._sigma_n(probe)
            report = conditions.verify_operator_conditions(
                denoiser, probe, tol=config.verify_tolerance, sigma_n=sigma_n
            )
            summary.add_entries({"sigma_n": sigma_n, **report.as_dict()}, prefix=f"probe.{index}")
            all_passed &= report.passed
            self._logger.info(
                f"Probe {index}: "
                + ", ".join(f"{name}={passed}" for name, passed in report.checks.items())
            )
        if config.dump_weights and denoiser.exposes_weight_matrix:
            self._dump_weights(denoiser, probes[0], self._sigma_n(probes[0]))
        summary.add_entries({"probes": len(probes), "pass": all_passed})
        summary.write()
        return ExperimentResult(self._output_directory, probes[-1], summary.entries())

    # ----------------------------------------------------------------------------------------------
    def _run_pnp(
        self,
        method: str,
        x_init: np.ndarray,
        inversion: operators.InversionOperator,
        sigma_lambda: float,
    ) -> tuple[pnp.PnPState, pnp.ResidualLog, operators.DenoisingOperator]:
        """Run plug-and-play with one denoiser."""
        config = self._config
        pnp_config = pnp.PnPConfig(
            beta=config.beta_for(method),
            sigma_lambda=sigma_lambda,
            max_iterations=config.iterations,
            primal_tolerance=config.primal_tolerance,
            dual_tolerance=config.dual_tolerance,
            weight_freeze_iteration=config.freeze_iteration,
            early_stopping=config.early_stopping,
        )
        denoiser = self._build_denoiser(method, freeze_at=config.freeze_iteration)
        self._logger.info(
            f"Plug-and-play with {method}: beta={pnp_config.beta}, "
            f"sigma_lambda={pnp_config.sigma_lambda:.4e}, sigma_n={pnp_config.sigma_n:.4e}"
        )
        state, residual_log = pnp.run_pnp(x_init, inversion, denoiser, pnp_config, self._logger)
        return state, residual_log, denoiser

    def _build_denoiser(self, method: str, freeze_at: int | None) -> operators.DenoisingOperator:
        params = nlm.NlmParams(
            patch_radius=self._config.patch_radius,
            search_radius=self._config.search_radius,
            threads=self._config.threads,
        )
        return denoisers.build_denoiser(method, params, freeze_at, self._logger)

    def _sigma_lambda(self, baseline: np.ndarray, summary: postprocessor.Postprocessor) -> float:
        if self._config.sigma_lambda is not None:
            summary.add_entries({"sigma_lambda": self._config.sigma_lambda})
            return self._config.sigma_lambda
        estimate = pnp.estimate_sigma_lambda(baseline)
        if estimate.floored:
            self._logger.warning(f"sigma_lambda floored to {estimate.value:.4e}")
        summary.add_entries(
            {"sigma_lambda": estimate.value, "sigma_lambda_floored": estimate.floored}
        )
        return estimate.value

    def _sigma_n(self, image: np.ndarray) -> float:
        if self._config.sigma_n is not None:
            return self._config.sigma_n
        sigma_lambda = self._config.sigma_lambda or pnp.estimate_sigma_lambda(image).value
        return math.sqrt(self._config.beta) * sigma_lambda

    def _interpolation_truth(self) -> np.ndarray | None:
        config = self._config
        if config.input_image is not None:
            return utils.read_raster(config.input_image).astype(np.float64)
        if config.mask_file is not None:
            return None
        phantom = phantoms.superellipse_phantom(
            (config.image_size, config.image_size), config.phantom_count, seed=self._phantom_seed
        )
        phantom.write_manifest(self._output_directory / "phantom.manifest")
        utils.write_raster(self._output_directory / "truth.raster", phantom.image)
        return phantom.image

    def _tomography_truth(self, geometry: tomography.ProjectionGeometry) -> np.ndarray:
        config = self._config
        if config.input_image is not None:
            return utils.read_raster(config.input_image).astype(np.float64)
        disks = phantoms.random_disks(
            geometry.shape,
            config.disk_count,
            (config.disk_radius_min, config.disk_radius_max),
            seed=self._phantom_seed,
            pixel_pitch=geometry.pixel_pitch,
        )
        phantom = phantoms.disk_phantom(geometry.shape, disks, pixel_pitch=geometry.pixel_pitch)
        phantom.write_manifest(self._output_directory / "phantom.manifest")
        utils.write_raster(self._output_directory / "truth.raster", phantom.image)
        return phantom.image

    def _write_run_artifacts(
        self, method: str, reconstruction: np.ndarray, residual_log: pnp.ResidualLog
    ) -> None:
        name = _file_label(method)
        if method == self._config.denoiser:
            utils.write_raster(self._output_directory / "recon.raster", reconstruction)
            residual_log.write_csv(self._output_directory / "residuals.csv")
        else:
            utils.write_raster(self._output_directory / f"recon_{name}.raster", reconstruction)
        residual_log.write_csv(self._output_directory / f"residuals_{name}.csv")

    def _dump_weights(
        self, denoiser: operators.DenoisingOperator, image: np.ndarray, sigma_n: float
    ) -> None:
        if not denoiser.exposes_weight_matrix:
            self._logger.warning(f"{self._config.denoiser} exposes no weight matrix to dump")
            return
        rows, cols, weights = denoiser.weight_matrix(image, sigma_n).triplets()
        path = self._output_directory / "weights.triplets"
        utils.write_weight_triplets(path, rows, cols, weights)


# --------------------------------------------------------------------------------------------------
def _convert(annotation: object, text: str) -> object:
    """Convert a configuration string to the type of a dataclass field."""
    arguments = typing.get_args(annotation)
    if isinstance(annotation, types.UnionType) and type(None) in arguments:
        if text.lower() in ("none", "auto", ""):
            return None
        annotation = next(argument for argument in arguments if argument is not type(None))
    if annotation is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"Not a boolean: {text}")
    if annotation is Path:
        return Path(text)
    if annotation is int:
        return int(text)
    if annotation is float:
        return float(text)
    return text


def _format(value: object) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Path):
        return value.as_posix()
    return str(value)


def _file_label(method: str) -> str:
    if method.startswith("external:"):
        return "external_" + Path(method.removeprefix("external:")).stem
    return method


def _score(reconstruction: np.ndarray, truth: np.ndarray | None) -> float | None:
    if truth is None:
        return None
    return interpolation.normalized_rmse(reconstruction, truth)


def _absolute_error(reconstruction: np.ndarray, truth: np.ndarray | None) -> dict[str, object]:
    if truth is None:
        return {}
    return {"rms_error": float(np.sqrt(np.mean((reconstruction - truth) ** 2)))}


def _outlier_scores(
    reconstruction: np.ndarray,
    inversion: tomography.TomographyInversion,
    tilt_series: tomography.TiltSeries,
    geometry: tomography.ProjectionGeometry,
) -> dict[str, object]:
    if tilt_series.outlier_flags is None or inversion.nuisance is None:
        return {}
    residual = np.abs(
        tomography.data_residual(
            reconstruction, inversion.nuisance.offsets, tilt_series, geometry
        )
    )
    flags = tilt_series.outlier_flags
    return {
        "clean_residual": float(np.mean(residual[~flags])) if np.any(~flags) else None,
        "outlier_residual": float(np.mean(residual[flags])) if np.any(flags) else None,
    }


def _denoiser_extras(denoiser: operators.DenoisingOperator) -> dict[str, object]:
    clamped = getattr(denoiser, "num_clamped_diagonals", None)
    return {} if clamped is None else {"clamped_diagonals": clamped}
