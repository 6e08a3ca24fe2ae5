//! The single class-index table shared by datasets, models and the S-layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// G-layer classes. Model output index = declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TopClass {
    Encrypted,
    Benign,
    Malware,
}

impl TopClass {
    pub const ALL: [TopClass; 3] = [TopClass::Encrypted, TopClass::Benign, TopClass::Malware];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Lower-case directory name.
    pub fn slug(self) -> &'static str {
        match self {
            TopClass::Encrypted => "encrypted",
            TopClass::Benign => "benign",
            TopClass::Malware => "malware",
        }
    }
}

impl fmt::Display for TopClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Encrypted-traffic applications. S-layer model output index = declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EncryptedApp {
    Chat,
    Email,
    File,
    P2P,
    Streaming,
    VoIP,
}

impl EncryptedApp {
    pub const ALL: [EncryptedApp; 6] = [
        EncryptedApp::Chat,
        EncryptedApp::Email,
        EncryptedApp::File,
        EncryptedApp::P2P,
        EncryptedApp::Streaming,
        EncryptedApp::VoIP,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn slug(self) -> &'static str {
        match self {
            EncryptedApp::Chat => "chat",
            EncryptedApp::Email => "email",
            EncryptedApp::File => "file",
            EncryptedApp::P2P => "p2p",
            EncryptedApp::Streaming => "streaming",
            EncryptedApp::VoIP => "voip",
        }
    }
}

impl fmt::Display for EncryptedApp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A dataset label: an application is present exactly for encrypted traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel {
    top: TopClass,
    sub: Option<EncryptedApp>,
}

impl ClassLabel {
    /// The eight leaf classes in table order: six applications, benign, malware.
    pub const ALL: [ClassLabel; 8] = [
        ClassLabel::encrypted(EncryptedApp::Chat),
        ClassLabel::encrypted(EncryptedApp::Email),
        ClassLabel::encrypted(EncryptedApp::File),
        ClassLabel::encrypted(EncryptedApp::P2P),
        ClassLabel::encrypted(EncryptedApp::Streaming),
        ClassLabel::encrypted(EncryptedApp::VoIP),
        ClassLabel::BENIGN,
        ClassLabel::MALWARE,
    ];
    pub const BENIGN: ClassLabel = ClassLabel {
        top: TopClass::Benign,
        sub: None,
    };
    pub const MALWARE: ClassLabel = ClassLabel {
        top: TopClass::Malware,
        sub: None,
    };

    pub const fn encrypted(app: EncryptedApp) -> Self {
        Self {
            top: TopClass::Encrypted,
            sub: Some(app),
        }
    }

    pub fn new(top: TopClass, sub: Option<EncryptedApp>) -> Result<Self> {
        match (top, sub) {
            (TopClass::Encrypted, Some(_)) | (TopClass::Benign | TopClass::Malware, None) => Ok(Self { top, sub }),
            (TopClass::Encrypted, None) => Err(Error::arg("encrypted label needs an application")),
            (t, Some(a)) => Err(Error::arg(format!("{t} label cannot carry application {a}"))),
        }
    }

    pub fn top(self) -> TopClass {
        self.top
    }

    pub fn sub(self) -> Option<EncryptedApp> {
        self.sub
    }

    /// Position in [`ClassLabel::ALL`].
    pub fn leaf_index(self) -> usize {
        match self.sub {
            Some(app) => app.index(),
            None => 6 + self.top.index() - 1,
        }
    }

    /// `encrypted/chat`, `benign`, `malware`.
    pub fn path(self) -> String {
        match self.sub {
            Some(app) => format!("{}/{}", self.top.slug(), app.slug()),
            None => self.top.slug().to_string(),
        }
    }

    /// Leaf display name as used in reports: the application for encrypted traffic.
    pub fn name(self) -> String {
        match self.sub {
            Some(app) => app.to_string(),
            None => self.top.to_string(),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        ClassLabel::ALL
            .into_iter()
            .find(|l| l.path() == lower || l.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                let known: Vec<String> = ClassLabel::ALL.iter().map(|l| l.path()).collect();
                Error::arg(format!("unknown class '{s}' (expected one of {})", known.join(", ")))
            })
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.path())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which classifier a label set trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Encrypted / Benign / Malware.
    #[serde(rename = "3class")]
    ThreeClass,
    /// The six encrypted applications.
    #[serde(rename = "6class")]
    SixClass,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::ThreeClass => 3,
            Task::SixClass => 6,
        }
    }

    /// Model output index for a label, or `None` when the label is outside the task.
    pub fn target(self, label: ClassLabel) -> Option<usize> {
        match self {
            Task::ThreeClass => Some(label.top().index()),
            Task::SixClass => label.sub().map(EncryptedApp::index),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Task::ThreeClass => TopClass::ALL.iter().map(|t| t.to_string()).collect(),
            Task::SixClass => EncryptedApp::ALL.iter().map(|a| a.to_string()).collect(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::ThreeClass => "3class",
            Task::SixClass => "6class",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3class" | "3" => Ok(Task::ThreeClass),
            "6class" | "6" => Ok(Task::SixClass),
            _ => Err(Error::arg(format!("unknown task '{s}' (expected 3class or 6class)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_conventions_are_fixed() {
        assert_eq!(TopClass::Encrypted.index(), 0);
        assert_eq!(TopClass::Benign.index(), 1);
        assert_eq!(TopClass::Malware.index(), 2);
        let order: Vec<&str> = EncryptedApp::ALL.iter().map(|a| a.slug()).collect();
        assert_eq!(order, ["chat", "email", "file", "p2p", "streaming", "voip"]);
        for (i, l) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(l.leaf_index(), i);
        }
    }

    #[test]
    fn sub_present_iff_encrypted() {
        assert!(ClassLabel::new(TopClass::Encrypted, None).is_err());
        assert!(ClassLabel::new(TopClass::Benign, Some(EncryptedApp::Chat)).is_err());
        assert!(ClassLabel::new(TopClass::Malware, None).is_ok());
    }

    #[test]
    fn labels_parse_and_serialize() {
        for l in ClassLabel::ALL {
            assert_eq!(l.path().parse::<ClassLabel>().unwrap(), l);
            assert_eq!(l.name().parse::<ClassLabel>().unwrap(), l);
            let j = serde_json::to_string(&l).unwrap();
            assert_eq!(serde_json::from_str::<ClassLabel>(&j).unwrap(), l);
        }
        assert!("video".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn task_targets() {
        let voip = ClassLabel::encrypted(EncryptedApp::VoIP);
        assert_eq!(Task::ThreeClass.target(voip), Some(0));
        assert_eq!(Task::SixClass.target(voip), Some(5));
        assert_eq!(Task::SixClass.target(ClassLabel::BENIGN), None);
        assert_eq!(Task::ThreeClass.target(ClassLabel::MALWARE), Some(2));
        assert_eq!("6class".parse::<Task>().unwrap(), Task::SixClass);
    }
}
