"""Lightweight salient object detection with a complementary trilateral decoder."""
__version__ = "0.1.0"
