"""DTSL - dual teacher-student segmentation"""
