"""Simulated serverless host with a learned scheduler for latency-sensitive functions."""
