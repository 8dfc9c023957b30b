import argparse
import json
import statistics
import timeit
from typing import Any, Callable, Dict, List

import numpy as np

from simloop.guidance_lib.dynamics_init import ObjectInitState
from simloop.guidance_lib.material_map import MaterialParams
from simloop.guidance_lib.mpm_sim import Collider, Grid, prepare_material, seed_particles, step, substep_dt
from simloop.guidance_lib.render_guidance import splat
from simloop.guidance_lib.scene_bundle import CameraFrame, ObjectMesh
from simloop.guidance_lib.sim_domain import SimDomain

# --- Default Configuration ---
DEFAULT_RESOLUTIONS = [32, 64, 128]
DEFAULT_ITERATIONS = 5
DEFAULT_REPEAT = 3
DEFAULT_PPC = 8
BLOCK_SIZE = 0.5
RUBBER = MaterialParams(density=1100.0, youngs=1e6, poisson=0.47, friction=0.1, damping=1.0)


class Statistics:
    """Per-call timings of one benchmark, in seconds.

    `to_dict` reports the same figures in milliseconds.
    """
    FIELDS = ("mean", "median", "stdev", "min", "max")

    def __init__(self, per_call_s: List[float]):
        spread = statistics.stdev(per_call_s) if len(per_call_s) > 1 else 0.0
        self.values_s = dict(zip(self.FIELDS, (statistics.mean(per_call_s), statistics.median(per_call_s),
                                               spread, min(per_call_s), max(per_call_s))))

    @property
    def min_s(self) -> float:
        return self.values_s["min"]

    def to_dict(self) -> Dict[str, float]:
        return {f"{name}_ms": value * 1000.0 for name, value in self.values_s.items()}


class BenchmarkResult:
    """Step and splat timings for one grid resolution."""
    def __init__(self, resolution: int, num_particles: int, dt: float):
        self.resolution = resolution
        self.num_particles = num_particles
        self.dt = dt
        self.step_stats: Statistics = None
        self.splat_stats: Statistics = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "resolution": self.resolution,
            "num_particles": self.num_particles,
            "dt": self.dt,
            "step": self.step_stats.to_dict() if self.step_stats else None,
            "splat": self.splat_stats.to_dict() if self.splat_stats else None,
        }


def _cube(size: float) -> ObjectMesh:
    h = size / 2.0
    vertices = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    faces = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ], dtype=np.int64)
    return ObjectMesh(object_id=1, vertices=vertices, faces=faces, colors=np.full((8, 3), 0.5))


def _camera() -> CameraFrame:
    rotation = np.diag([1.0, -1.0, -1.0])
    center = np.array([1.0, 1.0, 3.5])
    return CameraFrame(fx=256.0, fy=256.0, cx=128.0, cy=128.0, rotation=rotation,
                       translation=-rotation @ center, width=256, height=256, frame=1)


class BenchmarkRunner:
    """Times MPM substeps and particle splatting across grid resolutions.

    A cube of side `BLOCK_SIZE` sim units sits in the middle of the domain and
    falls under gravity, so every resolution simulates the same physical
    setup with a particle count that grows with n^3.
    """
    def __init__(self, resolutions: List[int], iterations: int, repeat: int, ppc: int):
        self.resolutions = resolutions
        self.iterations = iterations
        self.repeat = repeat
        self.ppc = ppc
        self.results: List[BenchmarkResult] = []

    def _run_benchmark(self, func: Callable[[], Any]) -> Statistics:
        timer = timeit.Timer(func)
        times = timer.repeat(repeat=self.repeat, number=self.iterations)
        return Statistics([t / self.iterations for t in times])

    def run(self):
        for n in self.resolutions:
            domain = SimDomain(scale=1.0, rotation=np.eye(3), translation=np.zeros(3), offset_coefficient=1.0,
                               grid_resolution=n, gravity_sim=np.array([0.0, -9.8, 0.0]))
            state = ObjectInitState(object_id=1, position=[1.0, 1.0, 1.0], scale=1.0, radius=BLOCK_SIZE * 0.87)
            params = prepare_material(RUBBER, domain, youngs_clamp=5e8)
            particles = seed_particles(_cube(BLOCK_SIZE), state, domain, params, self.ppc, seed=0)
            dt = substep_dt(particles, domain.dx)
            collider = Collider.empty(n)
            grid = Grid(n)
            result = BenchmarkResult(n, len(particles), dt)

            result.step_stats = self._run_benchmark(lambda: step(particles, grid, collider, domain, dt))
            camera = _camera()
            result.splat_stats = self._run_benchmark(
                lambda: splat(particles.position, particles.color, particles.object_id,
                              particles.particle_id, camera, splat_radius=1))
            self.results.append(result)

    def print_results_human_readable(self):
        print("--- MPM Solver Benchmark ---")
        print(f"Iterations per repetition: {self.iterations}")
        print(f"Repetitions: {self.repeat}")
        print(f"Particles per cell: {self.ppc}")

        for result in self.results:
            print("\n" + "=" * 80)
            print(f"Grid {result.resolution}^3, {result.num_particles} particles, dt = {result.dt:.3e} s")
            print("=" * 80)
            for label, stats in (("Substep", result.step_stats), ("Splat", result.splat_stats)):
                stats = stats.to_dict()
                print(f"\n{label} Performance:")
                print(f"  Mean:   {stats['mean_ms']:.4f} ms")
                print(f"  Median: {stats['median_ms']:.4f} ms")
                print(f"  Stdev:  {stats['stdev_ms']:.4f} ms")
                print(f"  Min:    {stats['min_ms']:.4f} ms (Best)")
                print(f"  Max:    {stats['max_ms']:.4f} ms (Worst)")
            simulated_second = result.step_stats.min_s / result.dt
            print(f"\nWall time per simulated second (best): {simulated_second:.1f} s")
            print("-" * 80)

        print("\n--- Benchmark Complete ---")

    def print_results_json(self):
        output_data = {
            "configuration": {
                "iterations": self.iterations,
                "repetitions": self.repeat,
                "particles_per_cell": self.ppc,
                "resolutions": self.resolutions,
            },
            "results": [res.to_dict() for res in self.results]
        }
        print(json.dumps(output_data, indent=2))


def main():
    """Parses command-line arguments and runs the benchmarks."""
    parser = argparse.ArgumentParser(
        description="Run benchmarks for the MPM solver and the particle splatter.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument('--resolutions', nargs='+', type=int, default=DEFAULT_RESOLUTIONS,
                        help="Grid resolutions n to benchmark.")
    parser.add_argument('--iterations', type=int, default=DEFAULT_ITERATIONS,
                        help="Substeps per benchmark repetition.")
    parser.add_argument('--repeat', type=int, default=DEFAULT_REPEAT,
                        help="Number of times to repeat the benchmark.")
    parser.add_argument('--ppc', type=int, default=DEFAULT_PPC, help="Particles per grid cell.")
    parser.add_argument('--output-json', action='store_true',
                        help="Output the results in JSON format instead of a human-readable table.")
    args = parser.parse_args()

    runner = BenchmarkRunner(resolutions=args.resolutions, iterations=args.iterations,
                             repeat=args.repeat, ppc=args.ppc)
    runner.run()

    if args.output_json:
        runner.print_results_json()
    else:
        runner.print_results_human_readable()


if __name__ == "__main__":
    main()
