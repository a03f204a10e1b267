use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Sim(#[from] paramgate::Error),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failures, 1 for I/O on outputs.
    pub fn exit_code(&self) -> i32 {
        use paramgate::Error as E;
        match self {
            CliError::Config { .. } | CliError::Read { .. } => 2,
            CliError::Write { .. } => 1,
            CliError::Sim(e) => match e {
                E::InvalidTruncation(_)
                | E::ModeOutOfRange { .. }
                | E::DimensionMismatch { .. }
                | E::SchemeMismatch
                | E::InvalidSelection(_)
                | E::InvalidState(_)
                | E::Infeasible { .. }
                | E::InvalidArgument(_)
                | E::Nyquist { .. }
                | E::NotInformationallyComplete { .. } => 2,
                E::Singularity(_)
                | E::StepUnderflow { .. }
                | E::TooManySteps { .. }
                | E::Incomplete(_)
                | E::DegenerateDistribution
                | E::NoDominantFrequency
                | E::NonMonotoneMap
                | E::FitFailed(_) => 3,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_split_input_from_numerics() {
        let c = CliError::Config {
            path: "x".into(),
            message: "y".into(),
        };
        assert_eq!(c.exit_code(), 2);
        assert_eq!(CliError::from(paramgate::Error::InvalidArgument("z".into())).exit_code(), 2);
        assert_eq!(CliError::from(paramgate::Error::StepUnderflow { t: 0.0 }).exit_code(), 3);
        assert_eq!(c.to_string(), "x: y");
    }
}
