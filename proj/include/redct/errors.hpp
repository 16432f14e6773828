#pragma once

#include <stdexcept>
#include <string>

namespace redct {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define REDCT_DECLARE_ERROR(Name)          \
    class Name : public Error {            \
    public:                                \
        using Error::Error;                \
    }

REDCT_DECLARE_ERROR(ShapeMismatch);
REDCT_DECLARE_ERROR(NotScalar);
REDCT_DECLARE_ERROR(LengthMismatch);
REDCT_DECLARE_ERROR(InvalidConfig);
REDCT_DECLARE_ERROR(ImageTooSmall);
REDCT_DECLARE_ERROR(SizeTooSmall);
REDCT_DECLARE_ERROR(BadGeometry);
REDCT_DECLARE_ERROR(TooSmall);
REDCT_DECLARE_ERROR(PatchTooLarge);
REDCT_DECLARE_ERROR(IoError);
REDCT_DECLARE_ERROR(ChecksumMismatch);
REDCT_DECLARE_ERROR(VersionMismatch);

#undef REDCT_DECLARE_ERROR

// Raised when the training loss stops being finite. Carries the path of the
// last good checkpoint (empty when nothing could be written).
class DivergedError : public Error {
public:
    DivergedError(const std::string& what, std::string checkpoint)
        : Error(what), checkpoint_(std::move(checkpoint)) {}
    const std::string& last_good_checkpoint() const noexcept { return checkpoint_; }

private:
    std::string checkpoint_;
};

}  // namespace redct
