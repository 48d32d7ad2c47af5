#pragma once

#include <stdexcept>
#include <string>

namespace coughnet {

// Base for everything thrown by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input/usage errors a caller can fix (CLI maps these to exit code 1).
struct ValidationError : Error {
    using Error::Error;
};

// --- audio ---
struct MalformedContainer : Error { using Error::Error; };
struct UnsupportedEncoding : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// --- preprocess ---
struct ClipTooShort : Error { using Error::Error; };
struct NoActivityFound : Error { using Error::Error; };

// --- features ---
struct DegenerateFilter : Error { using Error::Error; };

// --- augment ---
struct InvalidMagnitude : ValidationError { using ValidationError::ValidationError; };
struct SingleClassInput : Error { using Error::Error; };

// --- nncore / resnet ---
struct ShapeMismatch : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct GraphNotBuilt : Error { using Error::Error; };
struct InvalidConfig : ValidationError { using ValidationError::ValidationError; };
struct BadMagic : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct ShapeMismatchOnLoad : Error { using Error::Error; };

// --- dataset ---
struct MissingColumn : ValidationError { using ValidationError::ValidationError; };
struct BadRow : ValidationError { using ValidationError::ValidationError; };
struct EmptyManifest : ValidationError { using ValidationError::ValidationError; };
struct TooFewSamples : Error { using Error::Error; };

// --- metrics ---
struct UndefinedMetric : Error { using Error::Error; };
struct SingleClass : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };

// --- trainer ---
struct NonFiniteLoss : Error { using Error::Error; };
struct ConfigMismatch : Error { using Error::Error; };

}  // namespace coughnet
