use thiserror::Error;

/// Domain errors raised by the pipeline stages.
///
/// Variants map one-to-one onto the failure modes of the individual
/// operations; the CLI reports the variant name and exits with status 1.
/// Input/parse problems are carried by [`Error::Parse`] and [`Error::Io`]
/// and exit with status 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyInput: {0}")]
    EmptyInput(&'static str),
    #[error("InsufficientNeighbors: need at least 3, got {0}")]
    InsufficientNeighbors(usize),
    #[error("DegenerateNeighborhood")]
    DegenerateNeighborhood,
    #[error("ConstantField")]
    ConstantField,
    #[error("EmptyOutput: no point survived the visibility rules")]
    EmptyOutput,
    #[error("TooThin: foreground narrower than 2 pixels along an axis")]
    TooThin,
    #[error("DanglingAnchor: anchor {0} falls outside the foreground")]
    DanglingAnchor(usize),
    #[error("DegenerateConfiguration: correspondences are collinear or too few")]
    DegenerateConfiguration,
    #[error("NoOverlap")]
    NoOverlap,
    #[error("DegenerateTangency: masks touch in a single boundary pixel")]
    DegenerateTangency,
    #[error("SeamNotFound: endpoints are disconnected inside the overlap")]
    SeamNotFound,
    #[error("InsufficientPoints: ellipse fit needs at least 6 points, got {0}")]
    InsufficientPoints(usize),
    #[error("NotAnEllipse")]
    NotAnEllipse,
    #[error("InsufficientSlices: need at least 3 valid slice fits, got {0}")]
    InsufficientSlices(usize),
    #[error("InsufficientPairs: need at least {needed}, got {got}")]
    InsufficientPairs { needed: usize, got: usize },
    #[error("DegenerateGeometry: scene points are coplanar or collinear")]
    DegenerateGeometry,
    #[error("PrincipalPlanePoint: point lies on the principal plane")]
    PrincipalPlanePoint,
    #[error("SingularProjection")]
    SingularProjection,
    #[error("InsufficientAnchors: need at least 2, got {0}")]
    InsufficientAnchors(usize),
    #[error("InsufficientLandmarks: {shared} shared landmarks, {requested} requested")]
    InsufficientLandmarks { shared: usize, requested: usize },
    #[error("GridMismatch: rasters do not share pitch/origin/dimensions")]
    GridMismatch,
    #[error("InvalidCloud: {0}")]
    InvalidCloud(&'static str),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
