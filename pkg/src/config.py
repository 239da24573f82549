from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Integration
    INTEGRATOR_METHOD: str = "DOP853"
    INTEGRATOR_RTOL: float = 1e-10
    INTEGRATOR_ATOL: float = 1e-10

    # Profile construction
    PROFILE_SEED_S: float = 1e-3  # start of integration past the equator equilibrium
    PROFILE_RHO_FLOOR: float = 1e-6  # pole detection threshold
    PROFILE_GRID_POINTS: int = 4001

    # Geodesics
    POLE_MARGIN: float = 1e-3  # halt when |s| > L - margin
    RETURN_T_MIN: float = 1e-3  # equator events before this time are the launch point
    EVENT_TIME_TOL: float = 1e-10
    FD_STEP: float = 1e-5  # relative step for finite differences in the base
    FIBER_FD_STEP: float = 1e-4  # relative step for fiber Hessians
    MONOTONICITY_TOL: float = 1e-8

    # Linearized flow
    ROTATION_FAN_SIZE: int = 64

    # Shooting
    PINCH_WINDOW_SLACK: float = 1e-2
    SWEEP_POINTS: int = 64
    SWEEP_END_GAP: float = 5e-3  # closest grid point to either end, as a fraction of phi0
    PHI_STAR_TOL: float = 1e-9
    SWEEP_WIGGLE_TOL: float = 1e-6
    INTERSECTION_DISTANCE: float = 1e-7  # chordal distance
    TANGENCY_ANGLE: float = 1e-3  # radians
    CLOSURE_TOL: float = 1e-6

    # Knots
    LINK_RESIDUAL_MAX: float = 0.05
    LINK_MIN_DISTANCE: float = 1e-3
    PUSH_OFF: float = 1e-2

    # Hopf
    HOPF_PERTURBATION_MAX: float = 0.05
    HOPF_TUBE_RADIUS: float = 0.3
    NEWTON_MAX_ITER: int = 30

    # Runtime
    N_WORKERS: int = 1
    OUTPUT_DIR: str = "artifacts"
    DEFAULT_SEED: int = 0
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding='utf-8',
        case_sensitive=True
    )

    @property
    def ivp_options(self) -> dict:
        """Keyword arguments shared by every solve_ivp call."""
        return {
            "method": self.INTEGRATOR_METHOD,
            "rtol": self.INTEGRATOR_RTOL,
            "atol": self.INTEGRATOR_ATOL,
        }


settings = Settings()
