"""portsim tests"""
