"""DTSL - Command line and artifacts"""
