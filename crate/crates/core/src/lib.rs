//! Gesture-to-robot-command pipeline: a 3-D convolutional + LSTM gesture
//! classifier, a synthetic gesture clip generator, k-fold evaluation, a
//! streaming recognizer, the attention-gated command protocol and a
//! simulated mobile manipulator.

pub mod dataset;
pub mod eval;
pub mod model;
pub mod protocol;
pub mod robotsim;
pub mod stream;
pub mod tensor;
