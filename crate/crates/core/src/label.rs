use serde::{Deserialize, Serialize};

/// Binary classification; `Y` (vulnerable) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Y,
    N,
}

impl Label {
    pub fn from_vulnerable(vulnerable: bool) -> Self {
        if vulnerable {
            Label::Y
        } else {
            Label::N
        }
    }

    pub fn is_vulnerable(self) -> bool {
        self == Label::Y
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Y => Label::N,
            Label::N => Label::Y,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Y => "Y",
            Label::N => "N",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
