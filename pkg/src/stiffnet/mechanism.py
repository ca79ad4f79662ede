"""Chemical mechanisms and the stiff kinetics right-hand side.

The state vector is ``u = [T, rho_1, ..., rho_M]`` with temperature in K and
species mass densities in kg/m^3.  Reactions are irreversible, follow mass
action on molar concentrations ``c_k = rho_k / W_k`` and use modified
Arrhenius coefficients ``k = A T^beta exp(-Ea / (R T))``.  Temperature follows
from a constant mixture heat capacity and constant formation enthalpies::

    dT/dt = -sum_k h_k drho_k/dt / (rho_total * cp)
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, MechanismParseError

GAS_CONSTANT = 8.314462618  # J/(mol K)
ONE_ATMOSPHERE = 101325.0  # Pa
AIR_O2 = 0.21
AIR_N2 = 0.79
# mol fuel per mol O2 at stoichiometry (2 H2 + O2 -> 2 H2O)
FUEL_PER_O2 = 2.0

BUNDLED = {
    "h2o2": "h2o2_skeletal.mech",
    "robertson": "robertson.mech",
    "linear_decay": "linear_decay.mech",
}


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    molar_mass: float  # kg/mol
    formation_enthalpy: float = 0.0  # J/kg

    def __post_init__(self):
        if not self.molar_mass > 0:
            raise ConfigurationError(f"species {self.name}: molar mass must be positive")


@dataclass(frozen=True)
class ReactionSpec:
    reactants: dict[str, int]
    products: dict[str, int]
    A: float
    beta: float = 0.0
    Ea: float = 0.0  # J/mol

    def __post_init__(self):
        if not self.reactants:
            raise ConfigurationError("reaction needs at least one reactant")
        for side in (self.reactants, self.products):
            for name, nu in side.items():
                if int(nu) != nu or nu < 1:
                    raise ConfigurationError(
                        f"stoichiometric coefficient of {name} must be a positive integer"
                    )
        if not self.A > 0:
            raise ConfigurationError("pre-exponential factor A must be positive")

    @property
    def equation(self) -> str:
        def side(terms):
            return " + ".join(name if nu == 1 else f"{nu} {name}" for name, nu in terms.items())

        return f"{side(self.reactants)} -> {side(self.products)}"


@dataclass(frozen=True)
class Mechanism:
    species: tuple[SpeciesSpec, ...]
    reactions: tuple[ReactionSpec, ...]
    mixture_cp: float  # J/(kg K)
    gas_constant: float = GAS_CONSTANT
    roles: dict[str, str] = field(default_factory=dict)
    name: str = "mechanism"

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ConfigurationError("species names must be unique")
        known = set(names)
        for r in self.reactions:
            for name in (*r.reactants, *r.products):
                if name not in known:
                    raise ConfigurationError(f"reaction {r.equation} references unknown species {name}")
        if not self.mixture_cp > 0:
            raise ConfigurationError("mixture cp must be positive")
        for role, name in self.roles.items():
            if name not in known:
                raise ConfigurationError(f"role {role}={name} names an unknown species")

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def species_names(self) -> list[str]:
        return [s.name for s in self.species]

    @property
    def channel_names(self) -> list[str]:
        return ["temperature"] + [f"rho_{n}" for n in self.species_names]

    def index(self, name: str) -> int:
        return self.species_names.index(name)

    @cached_property
    def molar_masses(self) -> np.ndarray:
        return np.array([s.molar_mass for s in self.species])

    @cached_property
    def enthalpies(self) -> np.ndarray:
        return np.array([s.formation_enthalpy for s in self.species])

    @cached_property
    def _stoich(self) -> tuple[np.ndarray, np.ndarray]:
        reac = np.zeros((len(self.reactions), self.n_species))
        prod = np.zeros_like(reac)
        for i, r in enumerate(self.reactions):
            for name, nu in r.reactants.items():
                reac[i, self.index(name)] = nu
            for name, nu in r.products.items():
                prod[i, self.index(name)] = nu
        return reac, prod

    @property
    def reactant_stoich(self) -> np.ndarray:
        return self._stoich[0]

    @cached_property
    def net_stoich(self) -> np.ndarray:
        reac, prod = self._stoich
        return prod - reac

    @cached_property
    def _arrhenius(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.array([r.A for r in self.reactions]),
            np.array([r.beta for r in self.reactions]),
            np.array([r.Ea for r in self.reactions]),
        )

    @cached_property
    def _reactant_terms(self) -> list[list[tuple[int, int]]]:
        return [[(self.index(n), nu) for n, nu in r.reactants.items()] for r in self.reactions]

    def mass_imbalance(self) -> np.ndarray:
        """Per reaction, |sum_k W_k nu_k| relative to the reactant mass."""
        net = self.net_stoich @ self.molar_masses
        scale = self.reactant_stoich @ self.molar_masses
        return np.abs(net) / scale


@dataclass
class State:
    temperature: float
    densities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.densities = np.asarray(self.densities, dtype=float)
        if not self.temperature > 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.temperature], self.densities))

    @classmethod
    def from_vector(cls, u, time=0.0) -> State:
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), u[1:].copy(), time)


def _vector(state) -> np.ndarray:
    if isinstance(state, State):
        return state.as_vector()
    return np.asarray(state, dtype=float)


def arrhenius_rate(A, beta, Ea, T, gas_constant=GAS_CONSTANT):
    """Modified Arrhenius coefficient ``A T^beta exp(-Ea/(R T))``."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise DomainError("temperature must be positive")
    k = A * T**beta * np.exp(-Ea / (gas_constant * T))
    return k if k.ndim else float(k)


def _kinetics(mechanism: Mechanism, u: np.ndarray):
    T = u[0]
    if not T > 0:
        raise DomainError(f"temperature must be positive, got {T}")
    rho = np.maximum(u[1:], 0.0)
    rho_total = rho.sum()
    if not rho_total > 0:
        raise DomainError("total density must be positive")
    A, beta, Ea = mechanism._arrhenius
    k = A * T**beta * np.exp(-Ea / (mechanism.gas_constant * T))
    conc = rho / mechanism.molar_masses
    q = k * np.prod(conc[None, :] ** mechanism.reactant_stoich, axis=1)
    omega = mechanism.molar_masses * (mechanism.net_stoich.T @ q)
    return T, rho_total, k, conc, q, omega


def rhs(mechanism: Mechanism, state) -> np.ndarray:
    """Time derivative ``[dT/dt, drho_1/dt, ..., drho_M/dt]``."""
    u = _vector(state)
    _, rho_total, _, _, _, omega = _kinetics(mechanism, u)
    dT = -(mechanism.enthalpies @ omega) / (rho_total * mechanism.mixture_cp)
    return np.concatenate(([dT], omega))


def jacobian(mechanism: Mechanism, state) -> np.ndarray:
    """Analytic ``d rhs / d u`` as an (M+1)x(M+1) matrix."""
    u = _vector(state)
    T, rho_total, k, conc, q, omega = _kinetics(mechanism, u)
    M = mechanism.n_species
    W = mechanism.molar_masses
    _, beta, Ea = mechanism._arrhenius

    # dq/dc: (n_reactions, M)
    dq_dc = np.zeros((len(q), M))
    for r, terms in enumerate(mechanism._reactant_terms):
        for j, nu in terms:
            others = k[r]
            for m, mu in terms:
                if m != j:
                    others = others * conc[m] ** mu
            dq_dc[r, j] = others * nu * conc[j] ** (nu - 1)
    dq_dT = q * (beta / T + Ea / (mechanism.gas_constant * T**2))

    J = np.zeros((M + 1, M + 1))
    J[1:, 0] = W * (mechanism.net_stoich.T @ dq_dT)
    J[1:, 1:] = (W[:, None] * (mechanism.net_stoich.T @ dq_dc)) / W[None, :]

    heat = mechanism.enthalpies @ omega
    denom = rho_total * mechanism.mixture_cp
    J[0, :] = -(mechanism.enthalpies @ J[1:, :]) / denom
    J[0, 1:] += heat / (rho_total * denom)
    return J


def initial_state_from_phi(mechanism: Mechanism, phi, T0, total_density) -> State:
    """Fuel/air mixture at equivalence ratio ``phi``.

    Mole fractions follow ``X_fuel : X_O2 : X_N2 = 2 phi 0.21 : 0.21 : 0.79``
    and are converted to mass densities summing to ``total_density``.
    """
    if not phi > 0 or not T0 > 0 or not total_density > 0:
        raise DomainError("phi, T0 and total_density must be positive")
    X = mole_fractions_from_phi(mechanism, phi)
    W = mechanism.molar_masses
    Y = X * W / (X @ W)
    return State(float(T0), total_density * Y, 0.0)


def mole_fractions_from_phi(mechanism: Mechanism, phi) -> np.ndarray:
    try:
        fuel, oxidizer = mechanism.roles["fuel"], mechanism.roles["oxidizer"]
    except KeyError:
        raise ConfigurationError("mechanism does not designate fuel and oxidizer species") from None
    X = np.zeros(mechanism.n_species)
    X[mechanism.index(fuel)] = FUEL_PER_O2 * phi * AIR_O2
    X[mechanism.index(oxidizer)] = AIR_O2
    inert = mechanism.roles.get("inert")
    if inert is not None:
        X[mechanism.index(inert)] = AIR_N2
    return X / X.sum()


def ideal_gas_density(mechanism: Mechanism, mole_fractions, T, pressure=ONE_ATMOSPHERE) -> float:
    mean_w = np.asarray(mole_fractions) @ mechanism.molar_masses
    return float(pressure * mean_w / (mechanism.gas_constant * T))


def ignition_mixture(mechanism, phi, T0, pressure=ONE_ATMOSPHERE) -> State:
    """``initial_state_from_phi`` at the ideal-gas density for ``pressure``."""
    rho = ideal_gas_density(mechanism, mole_fractions_from_phi(mechanism, phi), T0, pressure)
    return initial_state_from_phi(mechanism, phi, T0, rho)


# --- mechanism file format -------------------------------------------------

_SECTIONS = ("species", "reactions", "thermo", "roles")
_TERM = re.compile(r"^(?:(\d+)\s*)?([A-Za-z][A-Za-z0-9_()\-*]*)$")


def _parse_side(text, line_number, line):
    terms: dict[str, int] = {}
    for raw in text.split(" + "):
        m = _TERM.match(raw.strip())
        if not m:
            raise MechanismParseError(f"malformed term {raw.strip()!r}", line_number, line)
        nu = int(m.group(1) or 1)
        if nu < 1:
            raise MechanismParseError("stoichiometric coefficient must be >= 1", line_number, line)
        terms[m.group(2)] = terms.get(m.group(2), 0) + nu
    return terms


def _parse_float(value, what, line_number, line):
    try:
        return float(value)
    except ValueError:
        raise MechanismParseError(f"{what} is not a number", line_number, line) from None


def _key_values(tokens, line_number, line):
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key or not value:
            raise MechanismParseError(f"expected key=value, got {tok!r}", line_number, line)
        out[key] = value
    return out


def parse_mechanism(text: str, name: str = "mechanism") -> Mechanism:
    """Parse the sectioned mechanism text format.

    Raises
    ------
    MechanismParseError
        On malformed lines, unknown species, or non-positive A; the message
        names the offending line.
    """
    section = None
    species: list[SpeciesSpec] = []
    reactions: list[tuple[int, str, ReactionSpec]] = []
    thermo: dict[str, float] = {}
    roles: dict[str, str] = {}
    roles_line = None

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise MechanismParseError(f"unknown section [{section}]", number, raw)
            continue
        if section is None:
            raise MechanismParseError("content before any section header", number, raw)

        if section == "species":
            parts = line.split()
            if len(parts) not in (2, 3):
                raise MechanismParseError("expected 'name molar_mass formation_enthalpy'", number, raw)
            W = _parse_float(parts[1], "molar mass", number, raw)
            h = _parse_float(parts[2], "formation enthalpy", number, raw) if len(parts) == 3 else 0.0
            if not W > 0:
                raise MechanismParseError("molar mass must be positive", number, raw)
            species.append(SpeciesSpec(parts[0], W, h))

        elif section == "reactions":
            eq, _, rest = line.partition("A=")
            if "->" not in eq or not rest:
                raise MechanismParseError("expected 'reactants -> products  A=... beta=... Ea=...'", number, raw)
            lhs, _, rhs_text = eq.partition("->")
            params = _key_values(("A=" + rest).split(), number, raw)
            unknown = set(params) - {"A", "beta", "Ea"}
            if unknown:
                raise MechanismParseError(f"unknown reaction parameter(s) {sorted(unknown)}", number, raw)
            A = _parse_float(params["A"], "A", number, raw)
            if not A > 0:
                raise MechanismParseError("pre-exponential factor A must be positive", number, raw)
            reactants = _parse_side(lhs.strip(), number, raw)
            products = _parse_side(rhs_text.strip(), number, raw) if rhs_text.strip() else {}
            rxn = ReactionSpec(
                reactants,
                products,
                A,
                _parse_float(params.get("beta", "0"), "beta", number, raw),
                _parse_float(params.get("Ea", "0"), "Ea", number, raw),
            )
            reactions.append((number, raw, rxn))

        elif section == "thermo":
            for key, value in _key_values(line.split(), number, raw).items():
                if key not in ("cp", "R"):
                    raise MechanismParseError(f"unknown thermo key {key!r}", number, raw)
                thermo[key] = _parse_float(value, key, number, raw)

        elif section == "roles":
            roles_line = (number, raw)
            for key, value in _key_values(line.split(), number, raw).items():
                if key not in ("fuel", "oxidizer", "inert"):
                    raise MechanismParseError(f"unknown role {key!r}", number, raw)
                roles[key] = value

    known = {s.name for s in species}
    if len(known) != len(species):
        raise MechanismParseError("duplicate species name")
    for number, raw, rxn in reactions:
        for sp in (*rxn.reactants, *rxn.products):
            if sp not in known:
                raise MechanismParseError(f"unknown species {sp!r}", number, raw)
    for role, sp in roles.items():
        if sp not in known:
            raise MechanismParseError(f"role {role} names unknown species {sp!r}", *roles_line)
    if "cp" not in thermo:
        raise MechanismParseError("missing [thermo] cp=...")
    if not thermo["cp"] > 0:
        raise MechanismParseError("cp must be positive")
    if not species:
        raise MechanismParseError("no species declared")

    return Mechanism(
        tuple(species),
        tuple(r for _, _, r in reactions),
        thermo["cp"],
        thermo.get("R", GAS_CONSTANT),
        roles,
        name,
    )


def serialize_mechanism(mechanism: Mechanism) -> str:
    lines = ["[species]"]
    for s in mechanism.species:
        lines.append(f"{s.name} {s.molar_mass!r} {s.formation_enthalpy!r}")
    lines.append("[reactions]")
    for r in mechanism.reactions:
        lines.append(f"{r.equation}  A={r.A!r} beta={r.beta!r} Ea={r.Ea!r}")
    lines.append("[thermo]")
    lines.append(f"cp={mechanism.mixture_cp!r} R={mechanism.gas_constant!r}")
    if mechanism.roles:
        lines.append("[roles]")
        lines.append(" ".join(f"{k}={v}" for k, v in mechanism.roles.items()))
    return "\n".join(lines) + "\n"


def mechanism_id(mechanism: Mechanism) -> str:
    digest = hashlib.sha256(serialize_mechanism(mechanism).encode()).hexdigest()[:12]
    return f"{mechanism.name}-{digest}"


def load_mechanism(source: str | Path) -> Mechanism:
    """Load a mechanism from a file path or a bundled name (``h2o2``, ...)."""
    source = str(source)
    key = source.removeprefix("builtin:")
    if key in BUNDLED:
        text = resources.files("stiffnet.data").joinpath(BUNDLED[key]).read_text(encoding="utf-8")
        return parse_mechanism(text, name=key)
    path = Path(source)
    return parse_mechanism(path.read_text(encoding="utf-8"), name=path.stem)
