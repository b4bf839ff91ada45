"""Exception types shared across the package."""


class TetDtnError(Exception):
    """Base class for all package-specific errors."""


class DegenerateTetrahedron(TetDtnError):
    """Tetrahedron has (numerically) zero volume."""


class RegularityLost(TetDtnError):
    """A deformation violated the insphere floor or inverted an element."""


class ZeroDeformation(TetDtnError):
    """Normalization of an identically zero deformation was requested."""


class DomainMismatch(TetDtnError):
    """Two fields do not partition the same domain within tolerance."""


class MeshFailure(TetDtnError):
    """Conforming refinement could not satisfy the request."""


class SingularSystem(TetDtnError):
    """Discrete Helmholtz system is singular; signals an inadmissible
    frequency or a broken mesh."""


class EigFailure(TetDtnError):
    """Boundary pencil eigendecomposition failed."""


class MeshMismatch(TetDtnError):
    """Operands were assembled on incompatible meshes or boundary dofs."""


class AmbiguousMatch(TetDtnError):
    """Two same-value candidates cannot be told apart by the matcher."""


class InconsistentCorrespondence(TetDtnError):
    """Shared vertices received conflicting pairings."""


class NonPreservingDeformation(TetDtnError):
    """Operation requires a boundary-preserving deformation."""


class GridTooCoarse(TetDtnError):
    """Frequency grid spacing is too coarse for the requested radius."""


class Stalled(TetDtnError):
    """Backtracking failed repeatedly; descent cannot proceed."""
