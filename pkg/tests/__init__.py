# Test package for delaysynth
